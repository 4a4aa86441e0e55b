"""sysadapt: load-aware adaptive inference control.

A compact policy network picks a (resolution, depth) execution option per
frame to hold accuracy high while keeping processing delay under a budget
on a device whose background load fluctuates. Includes a delay-prediction
head for self-supervised adaptation to unseen devices and a first-order
meta-optimization that makes that adaptation improve the policy itself.
"""

__version__ = "0.1.0"

from .agent import AgentParams, AgentState, PolicyDistribution, backward, policy_forward, predict_delay, select_action
from .device import (DelaySample, DeviceProfile, action_cost, calibrate_profile,
                     measured_delay, model_delay, restrict_profile)
from .env import EpisodeLog, RewardConfig, SimEnv
from .errors import (BackendError, CalibrationError, ConfigError,
                     NumericalDivergenceError, UnsupportedPlatformError)
from .status import (BackgroundProcess, LoadTrajectory, SystemStatus,
                     generate_trajectory, probe_host, sample_status)
from .stream import (Action, ActionSpace, Frame, FrameStream, QualityTable,
                     accuracy, build_action_space, next_frame, update_stream_feature)
from .training import (AdamState, MetaConfig, adapt_on_device, aux_loss,
                       first_order_meta_update, meta_step, meta_train,
                       policy_loss, reward, train_agent)

__all__ = [name for name in dir() if not name.startswith("_")]
