"""A two-conv demo network, sized so export tests run in milliseconds."""

import torch
from torch import nn


class ToyConvNet(nn.Module):
    def __init__(self, c_in=3, c_mid=6, c_out=8, kernel_size=3, seed=0, bias=True):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_mid, kernel_size, bias=bias)
        self.relu1 = nn.ReLU()
        self.conv2 = nn.Conv2d(c_mid, c_out, kernel_size, bias=bias)
        self.relu2 = nn.ReLU()
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.5)

    def forward(self, x):
        return self.relu2(self.conv2(self.relu1(self.conv1(x))))


def save_toy_checkpoint(path, **kwargs):
    model = ToyConvNet(**kwargs)
    torch.save(model, path)
    return model
