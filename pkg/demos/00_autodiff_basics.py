"""A minimal tour of the tensor substrate: taped ops, backward, Adam.

Run:  python demos/00_autodiff_basics.py
"""

import numpy as np

from rgtrec import tensor as T

T.set_default_dtype(np.float64)

# 1. forward + backward on a tiny expression ----------------------------------
x = T.parameter([[1.0, 2.0], [3.0, 4.0]], name="x")
w = T.parameter([[0.5, -0.5], [1.0, 0.0]], name="w")

with T.Tape() as tape:
    y = T.softmax_rows(T.matmul(x, w))
    loss = T.tsum(T.mul(y, y))
    T.backward(loss, tape)

print("loss      ", float(loss.values))
print("dloss/dx  \n", x.grad)
print("dloss/dw  \n", w.grad)

# 2. check one gradient entry against a central finite difference -------------
h = 1e-6
orig = x.values[0, 0]
x.values[0, 0] = orig + h
up = float(T.tsum(T.square(T.softmax_rows(T.matmul(x, w)))).values)
x.values[0, 0] = orig - h
down = float(T.tsum(T.square(T.softmax_rows(T.matmul(x, w)))).values)
x.values[0, 0] = orig
print("analytic  ", x.grad[0, 0])
print("numeric   ", (up - down) / (2 * h))

# 3. Adam drives a quadratic toward its minimum -------------------------------
p = T.parameter([4.0], name="p")
opt = T.Adam({"p": p}, lr=0.2)
for step in range(120):
    with T.Tape() as tape:
        loss = T.tsum(T.square(p))
        T.backward(loss, tape)
    opt.step()
    if step % 30 == 29:
        print(f"step {step + 1:3d}: p = {float(p.values[0]):+.4f}")
print("target 0; note the constant-magnitude early steps, then the damping")
