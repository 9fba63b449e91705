#include "hsps/correlation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hsps/error.hpp"
#include "hsps/simd.hpp"

namespace hsps {
namespace {

constexpr Picos kMinTime = std::numeric_limits<Picos>::min();

void append_sorted(std::vector<Picos>& dst, std::span<const Picos> src, Picos& last) {
  for (const Picos t : src) {
    if (t < last) throw PreconditionError("timetags must be sorted by time");
    last = t;
  }
  dst.insert(dst.end(), src.begin(), src.end());
}

Picos half_low(Picos bin_width) { return (bin_width - 1) / 2; }

}  // namespace

Picos CorrelationHistogram::bin_lo(std::size_t k) const {
  const Picos inner = bin_width - half_low(bin_width) - 1;  // central bin half-span
  const auto j = static_cast<Picos>(k) - static_cast<Picos>(half_bins);
  if (j == 0) return -inner;
  if (j > 0) return inner + 1 + (j - 1) * bin_width;
  return -inner - 1 + (j + 1) * bin_width - (bin_width - 1);
}

Picos CorrelationHistogram::bin_hi(std::size_t k) const {
  const Picos inner = bin_width - half_low(bin_width) - 1;
  const auto j = static_cast<Picos>(k) - static_cast<Picos>(half_bins);
  if (j == 0) return inner;
  if (j > 0) return inner + j * bin_width;
  return -inner - 1 + (j + 1) * bin_width;
}

// ---------------------------------------------------------------------------

CrossCorrelator::CrossCorrelator(Picos bin_width, Picos tau_range) : last_a_(kMinTime), last_b_(kMinTime) {
  if (bin_width <= 0) throw ConfigError("bin width must be > 0");
  if (tau_range < 0) throw ConfigError("tau range must be >= 0");
  hist_.bin_width = bin_width;
  lo_ = -half_low(bin_width);
  const Picos inner = bin_width - half_low(bin_width) - 1;
  const Picos beyond = std::max<Picos>(0, tau_range - inner);
  hist_.half_bins = static_cast<std::size_t>((beyond + bin_width - 1) / bin_width);
  hist_.counts.assign(2 * hist_.half_bins + 1, 0);
  reach_ = hist_.reach();
}

void CrossCorrelator::push_a(std::span<const Picos> times) {
  append_sorted(a_, times, last_a_);
  n_a_ += times.size();
}

void CrossCorrelator::push_b(std::span<const Picos> times) {
  append_sorted(b_, times, last_b_);
  n_b_ += times.size();
}

void CrossCorrelator::process_anchor(Picos t) {
  while (b_lo_ < b_.size() && b_[b_lo_] < t - reach_) ++b_lo_;
  b_mid_ = std::max(b_mid_, b_lo_);
  while (b_mid_ < b_.size() && b_[b_mid_] < t) ++b_mid_;
  b_hi_ = std::max(b_hi_, b_mid_);
  while (b_hi_ < b_.size() && b_[b_hi_] <= t + reach_) ++b_hi_;
  const std::span<const Picos> b(b_);
  const std::span<std::uint64_t> counts(hist_.counts);
  const std::size_t m = hist_.half_bins;
  simd::accumulate_deltas(t, b.subspan(b_mid_, b_hi_ - b_mid_), lo_, hist_.bin_width, counts.subspan(m));
  simd::accumulate_deltas_mirrored(t, b.subspan(b_lo_, b_mid_ - b_lo_), lo_, hist_.bin_width,
                                   counts.subspan(0, m + 1));
}

void CrossCorrelator::advance(Picos watermark) {
  while (a_head_ < a_.size() && a_[a_head_] + reach_ < watermark) process_anchor(a_[a_head_++]);
  if (a_head_ > 4096 && 2 * a_head_ > a_.size()) {
    a_.erase(a_.begin(), a_.begin() + static_cast<std::ptrdiff_t>(a_head_));
    a_head_ = 0;
  }
  if (b_lo_ > 4096 && 2 * b_lo_ > b_.size()) {
    b_.erase(b_.begin(), b_.begin() + static_cast<std::ptrdiff_t>(b_lo_));
    b_mid_ -= b_lo_;
    b_hi_ -= b_lo_;
    b_lo_ = 0;
  }
}

void CrossCorrelator::finish() {
  while (a_head_ < a_.size()) process_anchor(a_[a_head_++]);
}

CorrelationHistogram CrossCorrelator::result(double integration_time_s, int channel_a, int channel_b) const {
  CorrelationHistogram h = hist_;
  h.integration_time_s = integration_time_s;
  h.channel_a = channel_a;
  h.channel_b = channel_b;
  h.n_a = n_a_;
  h.n_b = n_b_;
  return h;
}

CorrelationHistogram cross_correlation(std::span<const Picos> a, std::span<const Picos> b, Picos bin_width,
                                       Picos tau_range) {
  CrossCorrelator c(bin_width, tau_range);
  c.push_a(a);
  c.push_b(b);
  c.finish();
  double span_s = 0.0;
  if (!a.empty() || !b.empty()) {
    const Picos first = std::min(a.empty() ? b.front() : a.front(), b.empty() ? a.front() : b.front());
    const Picos last = std::max(a.empty() ? b.back() : a.back(), b.empty() ? a.back() : b.back());
    span_s = ps_to_seconds(last - first);
  }
  return c.result(span_s);
}

CorrelationHistogram g2_normalize(const CorrelationHistogram& hist, double rate_a_hz, double rate_b_hz) {
  if (!(rate_a_hz > 0.0) || !(rate_b_hz > 0.0)) throw DomainError("g2 normalization needs positive rates");
  if (!(hist.integration_time_s > 0.0)) throw DomainError("g2 normalization needs a positive integration time");
  CorrelationHistogram out = hist;
  out.g2.resize(hist.size());
  const double base = rate_a_hz * rate_b_hz * hist.integration_time_s;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    out.g2[k] = static_cast<double>(hist.counts[k]) / (base * ps_to_seconds(hist.bin_span(k)));
  }
  return out;
}

CorrelationHistogram g2_normalize(const CorrelationHistogram& hist) {
  if (!(hist.integration_time_s > 0.0)) throw DomainError("g2 normalization needs a positive integration time");
  return g2_normalize(hist, static_cast<double>(hist.n_a) / hist.integration_time_s,
                      static_cast<double>(hist.n_b) / hist.integration_time_s);
}

Estimate g2_at_zero(const CorrelationHistogram& h, Picos half_width) {
  if (!h.normalized()) throw PreconditionError("g2_at_zero needs a normalized histogram");
  double counts = 0.0;
  double expected = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const bool inside = h.bin_lo(k) >= -half_width && h.bin_hi(k) <= half_width;
    if (!inside && k != h.center()) continue;
    counts += static_cast<double>(h.counts[k]);
    expected += h.g2[k] > 0.0 ? static_cast<double>(h.counts[k]) / h.g2[k]
                              : static_cast<double>(h.n_a) * static_cast<double>(h.n_b) /
                                    h.integration_time_s * ps_to_seconds(h.bin_span(k));
  }
  Estimate e;
  e.value = counts / expected;
  e.error = std::sqrt(std::max(counts, 1.0)) / expected;
  return e;
}

// ---------------------------------------------------------------------------

CoherenceFit fit_g2_peak(const CorrelationHistogram& hist, const FitOptions& options) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    if (hist.counts[k] < options.min_counts) continue;
    const double x = hist.bin_center(k);
    if (options.fit_range_ps > 0 && std::abs(x) > static_cast<double>(options.fit_range_ps)) continue;
    xs.push_back(x);
    ys.push_back(hist.normalized() ? hist.g2[k] : static_cast<double>(hist.counts[k]));
  }
  const auto n = static_cast<Eigen::Index>(xs.size());
  if (n < 6) throw FitError("fewer than 6 bins above the count threshold");

  // Initial guess from the outer bins and the half-amplitude crossings.
  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(xs[i]) > std::abs(xs[j]); });
  const std::size_t outer = std::max<std::size_t>(1, order.size() / 5);
  double baseline = 0.0;
  for (std::size_t i = 0; i < outer; ++i) baseline += ys[order[i]];
  baseline /= static_cast<double>(outer);
  const std::size_t peak = static_cast<std::size_t>(std::max_element(ys.begin(), ys.end()) - ys.begin());
  const double amp = ys[peak] - baseline;
  const double span = std::max(std::abs(xs.front()), std::abs(xs.back()));
  auto side_guess = [&](int dir) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = (xs[i] - xs[peak]) * dir;
      if (d > 0 && ys[i] - baseline < amp / std::numbers::e) return std::max(d, 1.0);
    }
    return span / 20.0;
  };
  // Parameters: baseline, amplitude, log tau_left, log tau_right.
  Eigen::Vector4d p(baseline, amp, std::log(side_guess(-1)), std::log(side_guess(+1)));

  auto residuals = [&](const Eigen::Vector4d& q, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    const double tl = std::exp(q[2]);
    const double tr = std::exp(q[3]);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = xs[static_cast<std::size_t>(i)];
      const double tau = x < 0 ? tl : tr;
      const double e = std::exp(-std::abs(x) / tau);
      r[i] = ys[static_cast<std::size_t>(i)] - (q[0] + q[1] * e);
      if (jac) {
        const double dtau = q[1] * e * std::abs(x) / tau;  // d f / d log tau
        (*jac)(i, 0) = 1.0;
        (*jac)(i, 1) = e;
        (*jac)(i, 2) = x < 0 ? dtau : 0.0;
        (*jac)(i, 3) = x < 0 ? 0.0 : dtau;
      }
    }
  };

  Eigen::VectorXd r(n);
  Eigen::VectorXd r_trial(n);
  Eigen::MatrixXd jac(n, 4);
  residuals(p, r, &jac);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  int it = 0;
  bool converged = false;
  for (; it < options.max_iterations; ++it) {
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d g = jac.transpose() * r;
    if (g.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix4d a = jtj;
      for (int d = 0; d < 4; ++d) a(d, d) += lambda * std::max(jtj(d, d), 1e-12);
      const Eigen::Vector4d step = a.ldlt().solve(g);
      Eigen::Vector4d trial = p + step;
      trial[2] = std::clamp(trial[2], -10.0, 40.0);
      trial[3] = std::clamp(trial[3], -10.0, 40.0);
      residuals(trial, r_trial, nullptr);
      const double trial_cost = r_trial.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
        if (rel < 1e-12 || step.norm() < 1e-12) converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) {
      converged = true;  // no descent direction left: local minimum
      break;
    }
    residuals(p, r, &jac);
    if (converged) break;
  }
  if (!converged || !p.allFinite()) {
    throw FitError("peak fit did not converge after " + std::to_string(it) + " iterations (cost " +
                   std::to_string(cost) + ")");
  }
  CoherenceFit fit;
  fit.baseline = p[0];
  fit.peak_amplitude = p[1];
  fit.tau_c_signal_ps = std::exp(p[2]);
  fit.tau_c_idler_ps = std::exp(p[3]);
  fit.g2_0 = p[0] + p[1];
  fit.fit_residual = std::sqrt(cost / static_cast<double>(n));
  fit.points = static_cast<std::size_t>(n);
  fit.iterations = it;
  return fit;
}

Estimate coincidence_rate(const CorrelationHistogram& raw, const CoherenceFit& fit, double integration_time_s) {
  if (!(integration_time_s > 0.0)) throw DomainError("integration time must be > 0");
  if (fit.tau_c_signal_ps > static_cast<double>(raw.reach()) || fit.tau_c_idler_ps > static_cast<double>(raw.reach())) {
    throw ConfigError("coincidence window exceeds the histogram span");
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double c = raw.bin_center(k);
    if (c > -fit.tau_c_signal_ps && c < fit.tau_c_idler_ps) sum += static_cast<double>(raw.counts[k]);
  }
  return {sum / integration_time_s, std::sqrt(sum) / integration_time_s, {}};
}

double heralding_efficiency(double r_si_hz, double r_i_hz, double eta_d_s) {
  if (!(r_i_hz > 0.0)) throw DomainError("idler rate must be > 0");
  if (!(eta_d_s > 0.0 && eta_d_s <= 1.0)) throw DomainError("detector efficiency must be in (0,1]");
  return r_si_hz / (r_i_hz * eta_d_s);
}

double heralded_rate(double eta_h_s, double r_i_hz) { return eta_h_s * r_i_hz; }

// ---------------------------------------------------------------------------

Estimate HeraldedCounts::g2() const {
  if (n_ha == 0 || n_hb == 0) throw EstimationError("no herald-arm coincidences");
  Estimate e;
  const double g = static_cast<double>(n_hab) * static_cast<double>(n_h) /
                   (static_cast<double>(n_ha) * static_cast<double>(n_hb));
  e.value = g;
  const double rel2 = (n_hab > 0 ? 1.0 / static_cast<double>(n_hab) : 1.0) + 1.0 / static_cast<double>(n_ha) +
                      1.0 / static_cast<double>(n_hb);
  e.error = (n_hab > 0 ? g : static_cast<double>(n_h) / (static_cast<double>(n_ha) * static_cast<double>(n_hb))) *
            std::sqrt(rel2);
  return e;
}

std::size_t HeraldedG2Counter::Arm::count_near(Picos t, Picos half) {
  while (lo < times.size() && times[lo] < t - half) ++lo;
  std::size_t n = 0;
  for (std::size_t i = lo; i < times.size() && times[i] <= t + half; ++i) ++n;
  return n;
}

void HeraldedG2Counter::Arm::compact() {
  if (lo > 4096 && 2 * lo > times.size()) {
    times.erase(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(lo));
    lo = 0;
  }
}

HeraldedG2Counter::HeraldedG2Counter(Picos window) : window_(window), last_herald_(kMinTime) {
  if (window <= 0) throw ConfigError("coincidence window must be > 0");
  a_.last = kMinTime;
  b_.last = kMinTime;
}

void HeraldedG2Counter::push_herald(std::span<const Picos> times) { append_sorted(heralds_, times, last_herald_); }
void HeraldedG2Counter::push_a(std::span<const Picos> times) { append_sorted(a_.times, times, a_.last); }
void HeraldedG2Counter::push_b(std::span<const Picos> times) { append_sorted(b_.times, times, b_.last); }

void HeraldedG2Counter::process(Picos t_h) {
  const Picos half = window_ / 2;
  const std::size_t na = a_.count_near(t_h, half);
  const std::size_t nb = b_.count_near(t_h, half);
  ++counts_.n_h;
  counts_.n_ha += na;
  counts_.n_hb += nb;
  counts_.n_hab += static_cast<std::uint64_t>(na) * nb;
}

void HeraldedG2Counter::advance(Picos watermark) {
  const Picos half = window_ / 2;
  while (herald_head_ < heralds_.size() && heralds_[herald_head_] + half < watermark) process(heralds_[herald_head_++]);
  if (herald_head_ > 4096 && 2 * herald_head_ > heralds_.size()) {
    heralds_.erase(heralds_.begin(), heralds_.begin() + static_cast<std::ptrdiff_t>(herald_head_));
    herald_head_ = 0;
  }
  // Arm tags too old for any future herald can go.
  const Picos keep_from = (herald_head_ < heralds_.size() ? heralds_[herald_head_] : watermark) - half;
  for (Arm* arm : {&a_, &b_}) {
    while (arm->lo < arm->times.size() && arm->times[arm->lo] < keep_from) ++arm->lo;
    arm->compact();
  }
}

void HeraldedG2Counter::finish() {
  while (herald_head_ < heralds_.size()) process(heralds_[herald_head_++]);
}

HeraldedCounts heralded_counts(std::span<const Picos> heralds, std::span<const Picos> arm_a,
                               std::span<const Picos> arm_b, Picos window) {
  HeraldedG2Counter c(window);
  c.push_herald(heralds);
  c.push_a(arm_a);
  c.push_b(arm_b);
  c.finish();
  return c.counts();
}

Estimate heralded_g2(std::span<const Picos> heralds, std::span<const Picos> arm_a, std::span<const Picos> arm_b,
                     Picos window) {
  return heralded_counts(heralds, arm_a, arm_b, window).g2();
}

HspsMetrics heralding_metrics(const CorrelationHistogram& cross_raw, double r_i_hz, double eta_d_s,
                              const FitOptions& options) {
  HspsMetrics m;
  m.cross_fit = fit_g2_peak(cross_raw, options);
  m.r_si = coincidence_rate(cross_raw, m.cross_fit, cross_raw.integration_time_s);
  m.r_i.value = r_i_hz;
  m.r_i.error = std::sqrt(r_i_hz / cross_raw.integration_time_s);
  m.eta_h_s.value = heralding_efficiency(m.r_si.value, r_i_hz, eta_d_s);
  m.eta_h_s.error = m.eta_h_s.value * std::hypot(m.r_si.error / std::max(m.r_si.value, 1e-300),
                                                 m.r_i.error / r_i_hz);
  m.r_h_s.value = heralded_rate(m.eta_h_s.value, r_i_hz);
  // R_h,s = R_si / eta_d,s, so the idler-rate uncertainty cancels.
  m.r_h_s.error = m.r_si.error / eta_d_s;
  m.coincidence_window_ps = static_cast<Picos>(std::llround(m.cross_fit.tau_c_signal_ps + m.cross_fit.tau_c_idler_ps));
  return m;
}

}  // namespace hsps
