"""
Image-to-image template estimator g_phi and the patch critic used for the
density-ratio term.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F

# Symbol grids are padded to a multiple of this before the encoder.
DEPTH_MULTIPLE = 4


def conv_block(in_feat, out_feat):
    return nn.Sequential(
        nn.Conv2d(in_feat, out_feat, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_feat, out_feat, 3, padding=1),
        nn.ReLU(inplace=True),
    )


def up_block(in_feat, out_feat):
    return nn.Sequential(
        nn.Upsample(scale_factor=2, mode='nearest'),
        nn.Conv2d(in_feat, out_feat, 3, padding=1),
    )


class TemplateEstimator(nn.Module):
    """
    Three-level encoder-decoder with skip connections working on the symbol
    grid. A strided stem folds every pps x pps patch into one feature vector,
    the sigmoid head gives one whiteness value per symbol.
    """

    def __init__(self, pps=8, base_channels=16):
        super().__init__()
        c = base_channels
        self.pps = pps
        self.stem = nn.Conv2d(1, c, kernel_size=pps, stride=pps)

        self.enc1 = conv_block(c, c)
        self.pool1 = nn.MaxPool2d(2)
        self.enc2 = conv_block(c, 2 * c)
        self.pool2 = nn.MaxPool2d(2)

        self.bottleneck = conv_block(2 * c, 4 * c)

        self.up2 = up_block(4 * c, 2 * c)
        self.dec2 = conv_block(4 * c, 2 * c)
        self.up1 = up_block(2 * c, c)
        self.dec1 = conv_block(2 * c, c)

        self.out = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        n, m = x.shape[-2] // self.pps, x.shape[-1] // self.pps
        pad_n = (-n) % DEPTH_MULTIPLE
        pad_m = (-m) % DEPTH_MULTIPLE
        x = x[..., :n * self.pps, :m * self.pps]
        if pad_n or pad_m:
            x = F.pad(x, (0, pad_m * self.pps, 0, pad_n * self.pps), mode='replicate')

        e1 = self.enc1(self.stem(x))
        e2 = self.enc2(self.pool1(e1))
        b = self.bottleneck(self.pool2(e2))

        d2 = self.dec2(torch.cat([self.up2(b), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return torch.sigmoid(self.out(d1))[..., :n, :m]


class TemplateCritic(nn.Module):
    """Logit of log p_t(patch) / p_phi(patch) for square template patches"""

    def __init__(self, patch=32, channels=16):
        super().__init__()
        if patch % 8:
            raise ValueError(f'critic patch must be a multiple of 8, got {patch}')
        c = channels
        self.features = nn.Sequential(
            nn.Conv2d(1, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        self.head = nn.Linear(4 * c * (patch // 8) ** 2, 1)

    def forward(self, x):
        return self.head(torch.flatten(self.features(x), 1)).squeeze(1)
