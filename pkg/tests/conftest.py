import sys
from pathlib import Path

import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt.basemodels import LdpcCode  # noqa: E402
from cvqkd_rt.ldpc import construct_code  # noqa: E402


@pytest.fixture(scope="session")
def small_code() -> LdpcCode:
    """A 2048-bit rate-0.05 code; the design SNR is fixed to skip the EXIT search."""
    return construct_code(n=2048, rate=0.05, seed=7, design_snr=0.1)
