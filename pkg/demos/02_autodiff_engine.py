"""Tour of the autodiff engine: build a small conv network, backprop, and
compare one analytic gradient against a central finite difference."""

import numpy as np

from rcsnet import engine as E

rng = np.random.default_rng(0)

# float64 inputs put the whole graph into the 64-bit verification mode
x = E.GridTensor(rng.normal(size=(1, 2, 8, 8)), requires_grad=True, dtype=np.float64)
w1 = E.GridTensor(rng.normal(size=(4, 2, 3, 3)) * 0.4, requires_grad=True, dtype=np.float64)
b1 = E.GridTensor(np.zeros(4), requires_grad=True, dtype=np.float64)
w2 = E.GridTensor(rng.normal(size=(1, 4, 1, 1)) * 0.4, requires_grad=True, dtype=np.float64)
target = E.GridTensor(rng.normal(size=(1, 1, 8, 8)), dtype=np.float64)


def loss():
    hidden = E.relu(E.conv2d(x, w1, b1, padding=1))
    pred = E.sigmoid(E.conv2d(hidden, w2))
    return E.mean_all(E.square(E.sub(pred, target)))


value = loss()
E.backward(value)
print(f"loss = {value.item():.6f}")
print("gradient shapes:", {n: t.grad.shape for n, t in
                           [("w1", w1), ("b1", b1), ("w2", w2)]})

idx = (2, 1, 0, 2)
analytic = w1.grad[idx]
h = 1e-6
orig = w1.data[idx]
w1.data[idx] = orig + h
up = loss().item()
w1.data[idx] = orig - h
down = loss().item()
w1.data[idx] = orig
numeric = (up - down) / (2 * h)
print(f"w1{idx}: analytic {analytic:.10f} vs central difference {numeric:.10f}")
print(f"relative error: {abs(analytic - numeric) / abs(numeric):.2e}")

# repeated backward calls accumulate until reset
E.backward(loss())
print("grad doubled after second backward:",
      np.allclose(w1.grad[idx], 2 * analytic, rtol=1e-12))
E.zero_grads([x, w1, b1, w2])
print("grads cleared:", w1.grad is None)
