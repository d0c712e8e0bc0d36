"""Build a small MLP with the tensor engine and check its gradients numerically."""
import numpy as np

from gearnet import autodiff as ad
from gearnet.autodiff import Tensor
from gearnet.backbones import Mlp, MlpSpec
from gearnet.losses import cross_entropy

rng = np.random.default_rng(0)
net = Mlp(MlpSpec((3, 8, 4), init_scale=0.5), seed=0)  # 3 inputs, 8 hidden, 4 classes
x = Tensor(rng.normal(size=(6, 3)))
y = rng.integers(0, 4, 6)

loss = cross_entropy(net(x), y)
ad.backward(loss)  # fills .grad on every parameter
print("loss", loss.item())

w = net.parameters()[0]
fd = np.zeros_like(w.data)
h = 1e-5
for i in np.ndindex(w.data.shape):  # central differences, one weight at a time
    old = w.data[i]
    w.data[i] = old + h
    up = cross_entropy(net(x), y).item()
    w.data[i] = old - h
    down = cross_entropy(net(x), y).item()
    w.data[i] = old
    fd[i] = (up - down) / (2 * h)

print("max |analytic - numeric|", np.abs(w.grad - fd).max())
