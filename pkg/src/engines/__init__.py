from .base import BaseEngine
from .lti_engine import LtiEngine
from .ltv_engine import LtvEngine
from .picard_engine import PicardEngine
from .oracle_engine import OracleEngine

__all__ = [
    'BaseEngine',
    'LtiEngine',
    'LtvEngine',
    'PicardEngine',
    'OracleEngine'
]
