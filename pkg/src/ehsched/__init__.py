"""Joint energy and bandwidth scheduling for energy-harvesting transmitters sharing one band."""

from ._validation import (InfeasibleError, InvalidInputError, SizeLimitError,
                          UnsupportedConfigurationError)
from .bandwidth import BandwidthFitter, fit_bandwidth, fit_bandwidth_slots
from .discharge import discharge_is_minimal, greedy_discharge
from .harness import CampaignConfig, TrialReport, generate_instance, run_campaign
from .model import (Allocation, DischargePlan, Instance, battery_trajectory, check_feasible,
                    objective)
from .policies import (CausalWaterFilling, EqualBandwidthPolicy, GreedyPolicy, TDMAGreedyPolicy,
                       causal_step, equal_bandwidth_policy, greedy_policy, init_causal,
                       tdma_greedy_policy)
from .scheduler import OptimalScheduler, SolveResult, solve
from .verify import KktReport, grid_oracle, kkt_residual, reference_solve
from .waterfill import SegmentProfile, solve_ep

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
