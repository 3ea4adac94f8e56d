"""Cross-subject neural decoding: Pinsker features, CVAE mapping, MLP/LDA decoders."""

from ._xsmap import *  # noqa: F401,F403
from ._xsmap import __doc__ as _native_doc  # noqa: F401

__version__ = "0.1.0"
