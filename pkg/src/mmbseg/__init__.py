"""mmbseg: CPU semantic segmentation with uniform-capacity U-Net branches
and MBConv blocks whose 1x1 convolutions can be widened to 3x3."""

__version__ = "0.1.0"
