#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seedet/boxes.hpp"
#include "seedet/volume.hpp"

namespace seedet {

struct Candidate {
  std::string scan_id;
  double x = 0, y = 0, z = 0;
  double probability = 0;

  bool operator==(const Candidate&) const = default;
};

/// The seven false-positive rates at which sensitivity is reported.
inline constexpr std::array<double, 7> kFrocRates{0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};

struct CandidateTag {
  enum class Kind { TruePositive, FalsePositive, Ignored };
  Kind kind = Kind::FalsePositive;
  std::size_t gt = 0;  // for TruePositive
};

struct MatchResult {
  std::vector<CandidateTag> tags;  // parallel to the input candidates
  std::vector<bool> detected;      // parallel to the ground truths
};

/// Candidates must be sorted by descending probability (ties keep input
/// order). A candidate hits a nodule when its distance to the center is at
/// most the radius. Each candidate in turn becomes the TP of the nearest
/// still-undetected nodule it hits (lower index on equal distance); a
/// candidate hitting only detected nodules is ignored; one hitting nothing
/// is a false positive.
MatchResult match_candidates(std::span<const Candidate> candidates, std::span<const NoduleAnnotation> gts);

/// Candidates and ground truth of one scan.
struct ScanResult {
  std::string scan_id;
  std::vector<Candidate> candidates;
  std::vector<NoduleAnnotation> nodules;
};

struct FrocPoint {
  double threshold = 0;
  double fp_per_scan = 0;
  double sensitivity = 0;
};

struct FrocCurve {
  std::vector<FrocPoint> points;  // ascending fp_per_scan, non-decreasing sensitivity
  std::vector<double> rates;
  std::vector<double> sensitivities;  // at `rates`
  double mean = 0;
};

/// Sweeps every distinct probability threshold (closed: p >= t active).
/// Sensitivity at a rate interpolates linearly between the best point at or
/// below it and the first point above it; constant beyond the last point;
/// 0 below the first point. Throws if no scan has a ground truth.
FrocCurve froc(std::span<const ScanResult> scans, std::span<const double> rates = kFrocRates);

/// Plain average of per-rate sensitivities.
double mean_sensitivity(std::span<const double> sensitivities);

/// Linear interpolation of a sorted operating-point list at `rate`.
double sensitivity_at(std::span<const FrocPoint> points, double rate);

struct BootstrapBand {
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Percentile band over scan-level bootstrap resamples. Resample i uses its
/// own stream derived from (seed, i); resamples without any ground truth
/// are skipped.
BootstrapBand bootstrap_band(std::span<const ScanResult> scans, std::size_t n_resamples = 1000,
                             double level = 0.95, std::uint64_t seed = 0,
                             std::span<const double> rates = kFrocRates);

/// Concatenates per-patch boxes, applies one global NMS, sorts by
/// probability and keeps the top `top_k`.
std::vector<Candidate> stitch_candidates(const std::string& scan_id, std::span<const Box3> boxes,
                                         std::span<const double> probs, double nms_thresh, std::size_t top_k = 100);

// CSV: scan_id,x,y,z,probability
void write_candidates(const std::filesystem::path& path, std::span<const Candidate> rows);
std::vector<Candidate> read_candidates(const std::filesystem::path& path);

/// Groups candidates and annotations by scan. Scans listed only in the
/// candidates are kept as nodule-free scans; their ids are appended to
/// `unannotated` when given.
std::vector<ScanResult> group_by_scan(std::span<const Candidate> candidates,
                                      std::span<const NoduleAnnotation> annotations,
                                      std::vector<std::string>* unannotated = nullptr);

/// fp_per_scan,sensitivity,lower,upper per rate plus a trailing mean row.
/// Without a band, lower and upper repeat the point estimate.
void write_froc_csv(const std::filesystem::path& path, const FrocCurve& curve,
                    const std::optional<BootstrapBand>& band);

struct PlotSeries {
  std::string label;
  FrocCurve curve;
  std::optional<BootstrapBand> band;
};

/// FROC curves on a log2 FP axis, bootstrap bands dashed.
std::string froc_svg(std::span<const PlotSeries> series, const std::string& title = "FROC");
void write_froc_svg(const std::filesystem::path& path, std::span<const PlotSeries> series,
                    const std::string& title = "FROC");

}  // namespace seedet
