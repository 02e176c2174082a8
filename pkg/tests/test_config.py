"""
Unit tests for run configuration, alias files and candidate resolution
"""

import shutil
import tempfile
from datetime import date
from pathlib import Path

import pytest

from alphadoc.config import RunConfig, api_key, load_aliases, load_config, resolve_candidates, resolve_signal_files
from alphadoc.dsl import AlphaDef, AlphaRegistry, Provenance, parse_alpha
from alphadoc.errors import AuthError, ConfigError, DuplicateAlphaError, UnknownSignalError
from alphadoc.panel import Horizon

FIXTURES = Path(__file__).parent / "fixtures"


class TestLoadConfig:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def write_config(self, text: str) -> Path:
        path = self.test_dir / "alphadoc.cfg"
        path.write_text(text, encoding="utf-8")
        return path

    def test_typed_values(self):
        path = self.write_config(
            "# research run\n"
            "signal_files = data/*.csv\n"
            "price_file = prices.csv\n"
            "horizon = 1M\n"
            "baseline = PE, PB, ROE\n"
            "candidates = PVS,IQS\n"
            "start_date = 2016-01-01\n"
            "seed = 3\n"
            "workers = 2\n"
            "dedup = yes\n"
            "formula.QM = ROE * GM\n"
        )
        config = load_config(path)
        assert config.signal_files == ("data/*.csv",)
        assert config.horizon is Horizon.ONE_MONTH
        assert config.baseline == ("PE", "PB", "ROE")
        assert config.candidates == ("PVS", "IQS")
        assert config.start_date == date(2016, 1, 1)
        assert config.seed == 3 and config.workers == 2
        assert config.dedup is True
        assert config.formulas == {"QM": "ROE * GM"}
        assert config.base_dir == self.test_dir.resolve()
        assert config.path("prices.csv") == self.test_dir.resolve() / "prices.csv"

    def test_overrides_win(self):
        path = self.write_config("seed = 3\noutput_dir = out\n")
        config = load_config(path, {"seed": 9, "output_dir": None})
        assert config.seed == 9
        assert config.output_dir == "out"

    def test_defaults_without_file(self):
        config = load_config()
        assert config.transport == "replay"
        assert len(config.baseline) == 10
        assert config.workers >= 1

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="Unknown config key"):
            load_config(self.write_config("colour = blue\n"))

    @pytest.mark.parametrize("key", ["api_key", "OPENAI_API_KEY", "auth_token", "secret"])
    def test_credentials_are_rejected(self, key):
        with pytest.raises(ConfigError, match="credential"):
            load_config(self.write_config(f"{key} = sk-should-not-be-here\n"))

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            load_config(self.write_config("workers = many\n"))
        with pytest.raises(ConfigError):
            load_config(self.write_config("horizon = 6M\n"))
        with pytest.raises(ConfigError):
            load_config(self.write_config("baseline = PE, XYZ\n"))
        with pytest.raises(ConfigError):
            load_config(self.write_config("transport = carrier-pigeon\n"))

    def test_date_window_order(self):
        with pytest.raises(ConfigError):
            load_config(self.write_config("start_date = 2020-01-01\nend_date = 2019-01-01\n"))

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config(self.test_dir / "absent.cfg")

    def test_derived_paths(self):
        config = RunConfig(output_dir="out", base_dir=self.test_dir)
        assert config.registry_path == self.test_dir / "out" / "candidates.json"
        assert config.session_dir == self.test_dir / "out" / "sessions"


class TestSignalFiles:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())
        (self.test_dir / "data" / "old").mkdir(parents=True)
        for name in ("data/a.csv", "data/b.csv", "data/old/c.csv", "data/notes.txt"):
            (self.test_dir / name).write_text("ticker,date\n")

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_patterns(self):
        config = RunConfig(signal_files=("data/*.csv",), base_dir=self.test_dir)
        names = [p.relative_to(self.test_dir).as_posix() for p in resolve_signal_files(config)]
        assert names == ["data/a.csv", "data/b.csv"]

    def test_recursive_pattern_and_literal(self):
        config = RunConfig(signal_files=("data/**/c.csv", "data/a.csv"), base_dir=self.test_dir)
        names = [p.relative_to(self.test_dir).as_posix() for p in resolve_signal_files(config)]
        assert names == ["data/a.csv", "data/old/c.csv"]

    def test_no_match(self):
        with pytest.raises(ConfigError):
            resolve_signal_files(RunConfig(signal_files=("missing/*.csv",), base_dir=self.test_dir))
        with pytest.raises(ConfigError):
            resolve_signal_files(RunConfig(base_dir=self.test_dir))


class TestAliases:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_alias_file(self):
        aliases = load_aliases(FIXTURES / "aliases.txt")
        assert aliases["Price to Earnings"] == "PE"
        assert aliases["Return on Equity %"] == "ROE"
        assert aliases["P/E"] == "PE"

    def test_alias_to_unknown_signal(self):
        path = self.test_dir / "bad.txt"
        path.write_text("'Dividend Yield' = DY\n")
        with pytest.raises(ConfigError):
            load_aliases(path)

    def test_missing_alias_file(self):
        with pytest.raises(ConfigError):
            load_aliases(self.test_dir / "absent.txt")


class TestApiKey:

    def test_read_from_environment(self, monkeypatch):
        monkeypatch.setenv("ALPHADOC_TEST_KEY", "sk-env")
        assert api_key(RunConfig(api_key_env="ALPHADOC_TEST_KEY")) == "sk-env"

    def test_missing(self, monkeypatch):
        monkeypatch.delenv("ALPHADOC_TEST_KEY", raising=False)
        monkeypatch.setattr("alphadoc.config.load_dotenv", lambda *a, **k: False)
        with pytest.raises(AuthError):
            api_key(RunConfig(api_key_env="ALPHADOC_TEST_KEY"))


class TestResolveCandidates:

    def test_builtins_in_configured_order(self):
        alphas = resolve_candidates(RunConfig(candidates=("IQS", "PVS")))
        assert [a.abbreviation for a in alphas] == ["IQS", "PVS"]
        assert all(a.provenance is Provenance.BUILTIN for a in alphas)

    def test_inline_and_formula_keys(self):
        config = RunConfig(candidates=("PVS", "QM=ROE*GM", "GPY"), formulas={"GPY": "GM / PE", "LS": "log(SPS)"})
        alphas = resolve_candidates(config)
        assert [a.abbreviation for a in alphas] == ["PVS", "QM", "GPY", "LS"]
        assert alphas[1].expr == parse_alpha("ROE * GM")
        assert alphas[1].provenance is Provenance.USER_SUPPLIED

    def test_display_names_in_formulas(self):
        config = RunConfig(candidates=("EY=1 / [Price to Earnings]",))
        alphas = resolve_candidates(config, load_aliases(FIXTURES / "aliases.txt"))
        assert alphas[0].expr == parse_alpha("1 / PE")

    def test_registry_entries(self):
        registry = AlphaRegistry([AlphaDef("Gross Profit Yield", "GPY", parse_alpha("GM / PE"), Provenance.MINED)])
        assert [a.abbreviation for a in resolve_candidates(RunConfig(candidates=("GPY",)), registry=registry)] == ["GPY"]
        mined = resolve_candidates(RunConfig(candidates=("PVS",), include_mined=True), registry=registry)
        assert [a.abbreviation for a in mined] == ["PVS", "GPY"]

    def test_unknown_candidate(self):
        with pytest.raises(ConfigError):
            resolve_candidates(RunConfig(candidates=("NOPE",)))

    def test_bad_formula(self):
        with pytest.raises(UnknownSignalError):
            resolve_candidates(RunConfig(candidates=("BAD=ROE / DY",)))

    def test_duplicates(self):
        with pytest.raises(DuplicateAlphaError):
            resolve_candidates(RunConfig(candidates=("PVS", "PVS")))
