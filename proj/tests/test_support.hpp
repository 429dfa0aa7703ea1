#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "causpref/matrix.hpp"

namespace causpref::testing {

// Central finite differences, the independent oracle every analytic gradient
// in this project is checked against. `loss` must re-evaluate the full
// computation from the perturbed parameter values.
inline Matrix finite_difference(const std::function<double()>& loss, Matrix& w,
                                double step = 1e-5) {
  Matrix grad(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double saved = w.values()[i];
    w.values()[i] = saved + step;
    const double up = loss();
    w.values()[i] = saved - step;
    const double down = loss();
    w.values()[i] = saved;
    grad.values()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline double rel_err(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

inline double max_rel_err(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst,
                     rel_err(analytic.values()[i], numeric.values()[i]));
  }
  return worst;
}

// Pearson chi-square statistic for observed counts against expected
// probabilities.
inline double chi_square_stat(const std::vector<std::size_t>& observed,
                              const std::vector<double>& probs) {
  double n = 0.0;
  for (std::size_t c : observed) n += static_cast<double>(c);
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double expected = n * probs[i];
    const double d = static_cast<double>(observed[i]) - expected;
    stat += d * d / expected;
  }
  return stat;
}

// Critical value of the chi-square distribution at p = 0.01 via the
// Wilson-Hilferty cube approximation (exact enough for df in the tests).
inline double chi_square_crit_p01(std::size_t df) {
  const double z99 = 2.3263478740408408;
  const double k = static_cast<double>(df);
  const double t = 1.0 - 2.0 / (9.0 * k) + z99 * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl =
        (std::filesystem::temp_directory_path() / "causpref_test_XXXXXX")
            .string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace causpref::testing
