"""nvcodec: a desk-scale learned video codec.

Intra frames use a hyperprior autoencoder with an autoregressive context
model; inter frames combine coded optical flow, warping, a restoration
network and a ConvLSTM temporal prior; residuals are coded with temporally
augmented entropy modeling. Everything trains end-to-end against a
rate-distortion objective and round-trips through a bit-exact range coder.
"""

__version__ = "0.1.0"
