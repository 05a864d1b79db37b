"""Unsupervised restoration of images seen through a rippling water surface.

A neural height field and a neural image field are fitted jointly to a short
frame sequence through a first-order refraction model.  Subpackages:

``diffcore``      reverse-mode autodiff and Adam
``neuralfields``  SIREN networks, Fourier features, height and image fields
``refraction``    pixel grids, the distortion model, rendering
``training``      the two-stage optimization
``wavesim``       synthetic wave surfaces and distorted sequences
``metrics``       PSNR, SSIM, height errors, distortion correlation
``cli``           the ``waterlens`` command
"""

__version__ = "0.1.0"
