"""
Shared pytest configuration for the AlphaDoc test suite
Golden files live under tests/fixtures/golden and are compared byte for byte
"""

from pathlib import Path

import pytest

GOLDEN_DIR = Path(__file__).parent / 'fixtures' / 'golden'


def pytest_addoption(parser):
    parser.addoption(
        '--update-golden',
        action='store_true',
        default=False,
        help='Rewrite golden files under tests/fixtures/golden from the current output',
    )


class Golden:
    """Byte-for-byte comparison against a checked-in golden file"""

    def __init__(self, update: bool):
        self.update = update

    def check(self, name: str, data: bytes) -> None:
        path = GOLDEN_DIR / name
        if self.update:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
            return
        if not path.exists():
            # SVG goldens depend on the installed matplotlib build
            pytest.skip(f'golden file {name} not recorded yet (run pytest --update-golden)')
        assert data == path.read_bytes(), f'output differs from golden file {name}'

    def check_text(self, name: str, text: str) -> None:
        self.check(name, text.encode('utf-8'))

    def check_file(self, name: str, path: Path) -> None:
        self.check(name, Path(path).read_bytes())


@pytest.fixture
def golden(request):
    return Golden(request.config.getoption('--update-golden'))
