"""Fits y = w * x + b by full-batch gradient descent and reports the training MSE."""
import random

LEARNING_RATE = 0.0005
EPOCHS = 200


def make_data(n=200, seed=7):
    rng = random.Random(seed)
    xs = [rng.uniform(-3.0, 3.0) for _ in range(n)]
    ys = [2.0 * x + 1.0 + rng.gauss(0.0, 0.3) for x in xs]
    return xs, ys


def mse(w, b, xs, ys):
    return sum((w * x + b - y) ** 2 for x, y in zip(xs, ys)) / len(xs)


def main():
    xs, ys = make_data()
    w, b = 0.0, 0.0
    n = len(xs)
    for _ in range(EPOCHS):
        gw = sum(2.0 * (w * x + b - y) * x for x, y in zip(xs, ys)) / n
        gb = sum(2.0 * (w * x + b - y) for x, y in zip(xs, ys)) / n
        w -= LEARNING_RATE * gw
        b -= LEARNING_RATE * gb
    print(f"weight: {w:.4f}")
    print(f"bias: {b:.4f}")
    print(f"mse: {mse(w, b, xs, ys):.6f}")


if __name__ == "__main__":
    main()
