#include "seedet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>

#include "csv.hpp"
#include "seedet/error.hpp"
#include "seedet/phantom.hpp"

namespace seedet {

MatchResult match_candidates(std::span<const Candidate> candidates, std::span<const NoduleAnnotation> gts) {
  MatchResult out;
  out.tags.resize(candidates.size());
  out.detected.assign(gts.size(), false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    bool hit_any = false;
    double best = 0;
    std::size_t best_gt = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double dx = c.x - gts[g].x, dy = c.y - gts[g].y, dz = c.z - gts[g].z;
      const double d = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (d > gts[g].radius()) continue;
      hit_any = true;
      if (out.detected[g]) continue;
      if (best_gt == gts.size() || d < best) {
        best = d;
        best_gt = g;
      }
    }
    if (best_gt != gts.size()) {
      out.tags[i] = {CandidateTag::Kind::TruePositive, best_gt};
      out.detected[best_gt] = true;
    } else if (hit_any) {
      out.tags[i] = {CandidateTag::Kind::Ignored, 0};
    } else {
      out.tags[i] = {CandidateTag::Kind::FalsePositive, 0};
    }
  }
  return out;
}

namespace {

struct Event {
  double probability;
  bool true_positive;
};

struct ScanEvents {
  std::vector<Event> events;  // TPs and FPs only
  std::size_t n_gt = 0;
};

ScanEvents scan_events(const ScanResult& scan) {
  std::vector<Candidate> sorted = scan.candidates;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Candidate& a, const Candidate& b) { return a.probability > b.probability; });
  const MatchResult m = match_candidates(sorted, scan.nodules);
  ScanEvents out;
  out.n_gt = scan.nodules.size();
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (m.tags[i].kind == CandidateTag::Kind::Ignored) continue;
    out.events.push_back({sorted[i].probability, m.tags[i].kind == CandidateTag::Kind::TruePositive});
  }
  return out;
}

FrocCurve curve_from_events(std::vector<Event> events, std::size_t n_gt, std::size_t n_scans,
                            std::span<const double> rates) {
  if (n_gt == 0) throw ConfigError("froc: no ground-truth nodules in any scan");
  if (n_scans == 0) throw ConfigError("froc: no scans");
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.probability > b.probability; });
  FrocCurve curve;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < events.size();) {
    const double t = events[i].probability;
    for (; i < events.size() && events[i].probability == t; ++i) (events[i].true_positive ? tp : fp) += 1;
    curve.points.push_back({t, static_cast<double>(fp) / static_cast<double>(n_scans),
                            static_cast<double>(tp) / static_cast<double>(n_gt)});
  }
  curve.rates.assign(rates.begin(), rates.end());
  for (double r : rates) curve.sensitivities.push_back(sensitivity_at(curve.points, r));
  curve.mean = mean_sensitivity(curve.sensitivities);
  return curve;
}

}  // namespace

double sensitivity_at(std::span<const FrocPoint> points, double rate) {
  const FrocPoint* lo = nullptr;
  const FrocPoint* hi = nullptr;
  for (const auto& p : points) {
    if (p.fp_per_scan <= rate) {
      lo = &p;
    } else {
      hi = &p;
      break;
    }
  }
  if (!lo) return 0.0;
  if (!hi) return lo->sensitivity;
  const double t = (rate - lo->fp_per_scan) / (hi->fp_per_scan - lo->fp_per_scan);
  return lo->sensitivity + t * (hi->sensitivity - lo->sensitivity);
}

double mean_sensitivity(std::span<const double> sensitivities) {
  if (sensitivities.empty()) return 0.0;
  return std::accumulate(sensitivities.begin(), sensitivities.end(), 0.0) / static_cast<double>(sensitivities.size());
}

FrocCurve froc(std::span<const ScanResult> scans, std::span<const double> rates) {
  std::vector<Event> events;
  std::size_t n_gt = 0;
  for (const auto& s : scans) {
    auto se = scan_events(s);
    n_gt += se.n_gt;
    events.insert(events.end(), se.events.begin(), se.events.end());
  }
  return curve_from_events(std::move(events), n_gt, scans.size(), rates);
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= v.size()) return v.back();
  const double f = pos - static_cast<double>(i);
  return v[i] + f * (v[i + 1] - v[i]);
}

}  // namespace

BootstrapBand bootstrap_band(std::span<const ScanResult> scans, std::size_t n_resamples, double level,
                             std::uint64_t seed, std::span<const double> rates) {
  if (!(level > 0 && level < 1)) throw ConfigError("bootstrap: level must lie in (0, 1)");
  if (scans.empty()) throw ConfigError("bootstrap: no scans");
  std::vector<ScanEvents> per_scan;
  per_scan.reserve(scans.size());
  for (const auto& s : scans) per_scan.push_back(scan_events(s));

  const std::size_t R = rates.size();
  std::vector<std::vector<double>> draws(n_resamples);
  const long total = static_cast<long>(n_resamples);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < total; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<std::size_t> pick(0, per_scan.size() - 1);
    std::vector<Event> events;
    std::size_t n_gt = 0;
    for (std::size_t k = 0; k < per_scan.size(); ++k) {
      const auto& s = per_scan[pick(rng)];
      n_gt += s.n_gt;
      events.insert(events.end(), s.events.begin(), s.events.end());
    }
    if (n_gt == 0) continue;
    draws[static_cast<std::size_t>(i)] = curve_from_events(std::move(events), n_gt, per_scan.size(), rates).sensitivities;
  }
  BootstrapBand band;
  const double q = (1.0 - level) / 2.0;
  for (std::size_t r = 0; r < R; ++r) {
    std::vector<double> v;
    for (const auto& d : draws)
      if (!d.empty()) v.push_back(d[r]);
    if (v.empty()) throw ConfigError("bootstrap: every resample lacked ground truth");
    band.lower.push_back(percentile(v, q));
    band.upper.push_back(percentile(v, 1.0 - q));
  }
  return band;
}

std::vector<Candidate> stitch_candidates(const std::string& scan_id, std::span<const Box3> boxes,
                                         std::span<const double> probs, double nms_thresh, std::size_t top_k) {
  const auto kept = nms(boxes, probs, nms_thresh);
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < kept.size() && out.size() < top_k; ++i) {
    const auto& b = boxes[kept[i]];
    out.push_back(Candidate{scan_id, b.cx, b.cy, b.cz, probs[kept[i]]});
  }
  return out;
}

void write_candidates(const std::filesystem::path& path, std::span<const Candidate> rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "scan_id,x,y,z,probability\n" << std::setprecision(17);
  for (const auto& c : rows) os << c.scan_id << ',' << c.x << ',' << c.y << ',' << c.z << ',' << c.probability << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<Candidate> read_candidates(const std::filesystem::path& path) {
  std::vector<Candidate> out;
  for (const auto& row : csv::read_table(path, {"scan_id", "x", "y", "z", "probability"})) {
    Candidate c{row[0], csv::to_double(row[1], path), csv::to_double(row[2], path), csv::to_double(row[3], path),
                csv::to_double(row[4], path)};
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<ScanResult> group_by_scan(std::span<const Candidate> candidates,
                                      std::span<const NoduleAnnotation> annotations,
                                      std::vector<std::string>* unannotated) {
  std::vector<ScanResult> out;
  std::map<std::string, std::size_t> index;
  const auto slot = [&](const std::string& id) -> ScanResult& {
    auto [it, fresh] = index.emplace(id, out.size());
    if (fresh) out.push_back(ScanResult{id, {}, {}});
    return out[it->second];
  };
  for (const auto& a : annotations) slot(a.scan_id).nodules.push_back(a);
  const std::size_t annotated = out.size();
  for (const auto& c : candidates) slot(c.scan_id).candidates.push_back(c);
  if (unannotated) {
    for (std::size_t i = annotated; i < out.size(); ++i) unannotated->push_back(out[i].scan_id);
  }
  return out;
}

void write_froc_csv(const std::filesystem::path& path, const FrocCurve& curve,
                    const std::optional<BootstrapBand>& band) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "fp_per_scan,sensitivity,lower,upper\n" << std::setprecision(10);
  for (std::size_t i = 0; i < curve.rates.size(); ++i) {
    const double s = curve.sensitivities[i];
    os << curve.rates[i] << ',' << s << ',' << (band ? band->lower[i] : s) << ',' << (band ? band->upper[i] : s)
       << '\n';
  }
  os << "mean," << curve.mean << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace seedet
