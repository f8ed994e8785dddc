# %% [markdown]
# Reverse-mode autodiff on 2-D float64 arrays.  Every op records a closure
# that maps the output gradient to input gradients; `backward` walks them in
# reverse topological order.

# %%
import numpy as np

from misprompt.tensor import Tensor, grad_check, layer_norm, matmul, mean_all, softmax_rows, tanh

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)))
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

y = mean_all(tanh(matmul(x, w)))
y.backward()
print("loss", y.item())
print("dL/dw\n", w.grad)

# %%
# softmax rows are distributions, and a constant row shift changes nothing
p = softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
print(p.data, p.data.sum())
print(np.allclose(softmax_rows(Tensor([[101.0, 102.0, 103.0]])).data, p.data))

# %%
# central-difference check: the returned number is the worst relative error
g = Tensor(np.ones((1, 4)), requires_grad=True)
b = Tensor(np.zeros((1, 4)), requires_grad=True)
err = grad_check(lambda: mean_all(matmul(layer_norm(x, g, b), w)), [w, g, b], h=1e-4)
print(f"max relative error {err:.2e}")
