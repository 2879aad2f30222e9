import numpy as np

from specreg.network import ReLU


def relu_kink_margin(net, x):
    """Smallest |pre-activation| any ReLU sees on this input.

    Central differences straddle the ReLU kink whenever a perturbation can
    move a pre-activation across zero, so end-to-end gradient checks assert
    this margin is comfortably larger than the FD step before comparing.
    """
    margins = [np.inf]
    cur = x
    for layer in net.layers:
        if isinstance(layer, ReLU):
            margins.append(float(np.min(np.abs(cur))))
        cur = layer.forward(cur, train=True)
    return min(margins)
