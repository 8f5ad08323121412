from semmap.grid import FeatureScan
from semmap.localizer.ekf import EkfConfig, EkfState, ekf_predict, ekf_update, ekf_update_pose
from semmap.localizer.icp import (
    IcpConfig,
    IcpResult,
    MapIndex,
    align_2d,
    icp_localize,
    nearest_correspondence,
)
from semmap.localizer.session import (
    LocalizationRow,
    LocalizationSession,
    LocalizerConfig,
    read_localization,
    write_localization,
)

__all__ = [
    "EkfConfig",
    "EkfState",
    "FeatureScan",
    "IcpConfig",
    "IcpResult",
    "LocalizationRow",
    "LocalizationSession",
    "LocalizerConfig",
    "MapIndex",
    "align_2d",
    "ekf_predict",
    "ekf_update",
    "ekf_update_pose",
    "icp_localize",
    "nearest_correspondence",
    "read_localization",
    "write_localization",
]
