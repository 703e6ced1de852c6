#pragma once
// Pinned thresholds used by the experiment gates and the acceptance
// suite. Central so tests and the CLI --check mode agree.

namespace loralab::tolerances {

inline constexpr double kRecallExact = 1.0;
inline constexpr double kEditedAccuracyExact = 1.0;
inline constexpr double kRetentionMin = 0.99;
inline constexpr double kStrictModeEntrywise = 1e-10;
inline constexpr double kMinimalityRelGap = 1e-4;
inline constexpr double kOracleCosineMin = 0.999;
inline constexpr double kTwoHopAccuracyCap = 0.10;
inline constexpr double kMixtureResidualCap = 0.05;
inline constexpr double kCoefficientRelTol = 0.10;
inline constexpr double kKernelRatioErrorCap = 0.02;
inline constexpr double kConvergenceExponentLo = -0.6;
inline constexpr double kConvergenceExponentHi = -0.4;
inline constexpr double kHeldOutAccuracyCap = 0.10;
inline constexpr double kSharedDisjointGapMax = 0.10;
inline constexpr double kSameMultipleRelDiffCap = 0.20;

} // namespace loralab::tolerances
