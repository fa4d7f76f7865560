import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Tuple

from weakhedge.exceptions import ConfigurationError, ValidationError
from weakhedge.market import MarketSpec

logger = logging.getLogger(__name__)

LOSS_TYPES = ('quantile', 'identity', 'power', 'shifted')
DEFAULT_M_POINTS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class LossConfig:
    type: str = 'quantile'
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.type not in LOSS_TYPES:
            raise ConfigurationError(f"loss type must be one of {LOSS_TYPES}, got {self.type!r}")


@dataclass(frozen=True)
class NumericsConfig:
    steps: int = 16
    horizon: float = 1.0
    m_grid: int = 201
    tol: float = 1e-9
    alpha_scan: int = 21
    seed: int = 0
    n_jobs: int = 1
    m0: float = 0.9
    m_points: Tuple[float, ...] = DEFAULT_M_POINTS

    def __post_init__(self):
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigurationError(f"numerics.steps must be a positive integer, got {self.steps}")
        if not self.horizon > 0:
            raise ConfigurationError(f"numerics.horizon must be positive, got {self.horizon}")
        if not isinstance(self.m_grid, int) or self.m_grid < 3:
            raise ConfigurationError(f"numerics.m_grid must be an integer >= 3, got {self.m_grid}")
        if not self.tol > 0:
            raise ConfigurationError(f"numerics.tol must be positive, got {self.tol}")
        if not isinstance(self.alpha_scan, int) or self.alpha_scan < 2:
            raise ConfigurationError(f"numerics.alpha_scan must be an integer >= 2, got {self.alpha_scan}")
        if not 0.0 <= self.m0 <= 1.0:
            raise ConfigurationError(f"m0 must lie in [0, 1], got {self.m0}")
        if any(not 0.0 <= m <= 1.0 for m in self.m_points):
            raise ConfigurationError("every m point must lie in [0, 1]")
        object.__setattr__(self, 'm_points', tuple(float(m) for m in self.m_points))


@dataclass(frozen=True)
class RunConfig:
    market: MarketSpec
    loss: LossConfig
    numerics: NumericsConfig

    def with_overrides(self, steps: int = None, m0: float = None, seed: int = None,
                       m_points: Tuple[float, ...] = None) -> 'RunConfig':
        """Copy with the given command-line values replacing the file values"""
        changes = {key: value for key, value in (('steps', steps), ('m0', m0), ('seed', seed),
                                                 ('m_points', m_points)) if value is not None}
        if not changes:
            return self
        return replace(self, numerics=replace(self.numerics, **changes))

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_CONFIG = RunConfig(
    market=MarketSpec(s0=1.0, sigma=0.2, payoff_type='put', strike=1.0),
    loss=LossConfig('quantile'),
    numerics=NumericsConfig(),
)

_MARKET_REQUIRED = ('s0', 'sigma', 'r_lend', 'r_borrow', 'theta', 'payoff')
_NUMERICS_REQUIRED = ('steps', 'horizon', 'm_grid', 'tol', 'alpha_scan')


def _require(section: dict, keys, name: str):
    if not isinstance(section, dict):
        raise ConfigurationError(f"section {name!r} must be an object")
    missing = [key for key in keys if key not in section]
    if missing:
        raise ConfigurationError(f"section {name!r} misses {', '.join(missing)}")


def parse_config(raw: dict) -> RunConfig:
    """
    Build a RunConfig from the decoded JSON object with sections market, loss and numerics. Every field is mandatory
    except market.normalizer, numerics.seed, numerics.n_jobs, numerics.m0 and numerics.m_points.
    """
    for section in ('market', 'loss', 'numerics'):
        if section not in raw:
            raise ConfigurationError(f"configuration misses the {section!r} section")
    market, loss, numerics = raw['market'], raw['loss'], raw['numerics']
    _require(market, _MARKET_REQUIRED, 'market')
    _require(market['payoff'], ('type', 'strike'), 'market.payoff')
    _require(loss, ('type',), 'loss')
    _require(numerics, _NUMERICS_REQUIRED, 'numerics')
    payoff = market['payoff']
    table = payoff.get('table')
    try:
        spec = MarketSpec(
            s0=float(market['s0']), sigma=float(market['sigma']), r_lend=float(market['r_lend']),
            r_borrow=float(market['r_borrow']), theta=float(market['theta']), payoff_type=payoff['type'],
            strike=float(payoff['strike']), normalizer=market.get('normalizer'),
            table=None if table is None else tuple((float(s), float(v)) for s, v in table))
        return RunConfig(spec, LossConfig(loss['type'], dict(loss.get('params') or {})), NumericsConfig(
            steps=numerics['steps'], horizon=float(numerics['horizon']), m_grid=numerics['m_grid'],
            tol=float(numerics['tol']), alpha_scan=numerics['alpha_scan'], seed=int(numerics.get('seed', 0)),
            n_jobs=int(numerics.get('n_jobs', 1)), m0=float(numerics.get('m0', 0.9)),
            m_points=tuple(numerics.get('m_points', DEFAULT_M_POINTS))))
    except ConfigurationError:
        raise
    except (TypeError, ValueError, ValidationError) as error:
        raise ConfigurationError(f"invalid configuration: {error}") from error


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"configuration file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as error:
        raise ConfigurationError(f"configuration file {path} is not valid JSON: {error}") from error
    logger.debug("loaded configuration from %s", path)
    return parse_config(raw)
