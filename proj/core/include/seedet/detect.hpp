#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seedet/config.hpp"
#include "seedet/evaluation.hpp"
#include "seedet/network.hpp"
#include "seedet/volume.hpp"

namespace seedet {

/// Full-volume inference on a raw (unnormalized) volume: preprocess, tile
/// into overlapping eval patches, keep anchors with p >= prob_cutoff,
/// decode into volume coordinates, stitch with one global NMS. Candidate
/// positions are clamped into the volume.
std::vector<Candidate> detect(Detector<float>& net, const RunConfig& config, const Volume& raw);

/// Reference detector without learning: 6-connected components of voxels
/// above `hu_threshold`, one candidate per component at its centroid with
/// probability equal to the normalized peak intensity.
std::vector<Candidate> threshold_detect(const Volume& raw, double hu_threshold = -400.0);

struct FrocReport {
  FrocCurve curve;
  std::optional<BootstrapBand> band;
  /// Scans that had candidates but no annotations.
  std::vector<std::string> unannotated;
  std::size_t n_scans = 0;
};

/// FROC over the union of scans in `candidates` and `annotations`, plus
/// `extra_scans` that may have neither. A bootstrap band is computed when
/// bootstrap > 0.
FrocReport evaluate_detections(std::span<const Candidate> candidates, std::span<const NoduleAnnotation> annotations,
                               std::span<const double> rates, std::size_t bootstrap = 0, std::uint64_t seed = 0,
                               std::span<const std::string> extra_scans = {});

}  // namespace seedet
