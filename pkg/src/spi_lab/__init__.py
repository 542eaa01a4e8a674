"""Safe policy improvement with latent world models on finite MDPs."""
from .guarantees import (BoundReport, PacConfig, PreconditionError, pac_verify, verify_avd,
                         verify_representation_quality, verify_spi, verify_value_bound)
from .latent import Encoder, LatentMdp, LipschitzReport, fit_latent_model, lipschitz_constants, pushforward
from .losses import LossReport, crude_transition_bound, empirical_losses, exact_losses
from .mdp import (FiniteMdp, StationaryDist, TabularPolicy, TransitionBatch, ValueTables, average_episode_length,
                  discounted_occupancy, evaluate_policy, sample_transitions, stationary_distribution,
                  value_iteration)
from .neighborhood import IrSummary, constrained_improve_state, extremal_ir, in_neighborhood, mirror_step
from .surrogate import (LatentBatch, SoftmaxLatentPolicy, SurrogateConfig, clipped_update, imagine_rollouts,
                        ppo_drift, transitionwise_losses, utility)
from .transport import wasserstein

__version__ = "0.1.0"
