"""bubblelab: simulation and pricing for bubbles driven by strict local martingales.

The package pairs two Monte Carlo engines, one for the price process X under
the pricing measure and one for its reciprocal under the associated measure
where the reciprocal is a true martingale, and checks every pricing formula
against closed forms or the twin engine.
"""

from .closedform import (
    bes3_call_closed,
    bes3_density,
    bes3_mean,
    exchange_closed_bes3,
    first_passage_prob,
)
from .duality import (
    BubbleTerm,
    PriceEstimate,
    bubble_term,
    corrected_price,
    price_decomposition_q,
    price_direct_p,
    price_survival_q,
    reweight_price,
)
from .engine import (
    EventClock,
    EventClocks,
    PathEnsemble,
    dump_paths,
    simulate_p,
    simulate_q,
    simulate_two_asset,
)
from .lastpassage import LastPassageRecord, detect_rho, dump_clocks, premium_identity_check
from .models import (
    DualDynamics,
    ModelSpec,
    ScaleFunction,
    StrictnessReport,
    cev,
    classify_strictness,
    dual_dynamics,
    exp_lm,
    inverse_bes3,
    natural_scale,
    scaled_transient,
    time_change_strictify,
    time_changed,
    two_asset,
    two_asset_unit_y,
)
from .multivariate import (
    kelvin_inversion,
    simulate_conformal_bm,
    simulate_joint_exponential,
)
from .payoffs import PayoffSpec, call, capped_call, chooser, put, ratio_call, reset_call
from .pricers import (
    BarrierIdentity,
    ExchangeSpec,
    RealWorldQuote,
    barrier_price,
    chooser_price,
    exchange_lastpassage,
    real_world_price,
)
from .projection import ProjectionResult, optional_projection_bes3

__version__ = "0.1.0"
