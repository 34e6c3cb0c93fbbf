#include "covsteer/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "covsteer/errors.hpp"

namespace covsteer {

namespace {

using nlohmann::json;

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(12);
  return out;
}

double number_at(const json& j, const char* key, std::size_t k, int c = -1) {
  const json& arr = j.at(key).at(k);
  return c < 0 ? arr.get<double>() : arr.at(c).get<double>();
}

}  // namespace

std::vector<std::string> write_csv_reports(const json& report,
                                           const std::string& out_dir) {
  if (!report.is_object() || !report.contains("knot_times")) {
    throw ConfigError("report JSON is missing \"knot_times\"");
  }
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  std::vector<std::string> written;

  const json& times = report.at("knot_times");
  const std::size_t num_knots = times.size();
  const bool have_pred = report.contains("prediction");

  {
    const auto path = dir / "state_envelopes.csv";
    auto out = open_csv(path);
    out << "time,component,mc_mean,mc_sigma,lc_mean,lc_sigma\n";
    const json& mean = report.at("state_mean");
    const json& cov = report.at("state_cov");
    for (std::size_t k = 0; k < num_knots; ++k) {
      const std::size_t n = mean.at(k).size();
      for (std::size_t c = 0; c < n; ++c) {
        const double var = cov.at(k).at(c).at(c).get<double>();
        out << times.at(k).get<double>() << ',' << c << ','
            << mean.at(k).at(c).get<double>() << ','
            << std::sqrt(std::max(var, 0.0)) << ',';
        if (have_pred) {
          const json& pred = report.at("prediction");
          out << number_at(pred, "state_mean", k, static_cast<int>(c)) << ','
              << number_at(pred, "state_sigma", k, static_cast<int>(c));
        } else {
          out << ',';
        }
        out << '\n';
      }
    }
    written.push_back(path.string());
  }

  {
    const auto path = dir / "control_fan.csv";
    auto out = open_csv(path);
    out << "time,component,mc_mean,mc_sigma,lc_sigma,feedforward\n";
    const json& mean = report.at("control_mean");
    const json& sigma = report.at("control_sigma");
    for (std::size_t k = 0; k < mean.size(); ++k) {
      const std::size_t m = mean.at(k).size();
      for (std::size_t c = 0; c < m; ++c) {
        out << times.at(k).get<double>() << ',' << c << ','
            << mean.at(k).at(c).get<double>() << ','
            << sigma.at(k).at(c).get<double>() << ',';
        if (have_pred) {
          out << number_at(report.at("prediction"), "control_sigma", k,
                           static_cast<int>(c));
        }
        out << ',';
        if (report.contains("feedforward")) {
          out << number_at(report, "feedforward", k, static_cast<int>(c));
        }
        out << '\n';
      }
    }
    written.push_back(path.string());
  }

  if (report.contains("terminal_cost")) {
    const auto path = dir / "deltav_histogram.csv";
    auto out = open_csv(path);
    out << "bin_lo,bin_hi,count\n";
    std::vector<double> samples =
        report.at("terminal_cost").at("samples").get<std::vector<double>>();
    if (!samples.empty()) {
      const double lo = samples.front();
      const double hi = std::max(samples.back(), lo + 1e-12);
      constexpr int kBins = 50;
      const double width = (hi - lo) / kBins;
      std::vector<int> counts(kBins, 0);
      for (double s : samples) {
        int b = static_cast<int>((s - lo) / width);
        counts[std::clamp(b, 0, kBins - 1)]++;
      }
      for (int b = 0; b < kBins; ++b) {
        out << lo + b * width << ',' << lo + (b + 1) * width << ',' << counts[b]
            << '\n';
      }
    }
    written.push_back(path.string());
  }

  {
    const auto path = dir / "density_envelope.csv";
    auto out = open_csv(path);
    out << "time,mc_sigma,model_sigma\n";
    const json& sigma = report.at("field_sigma");
    for (std::size_t k = 0; k < num_knots; ++k) {
      out << times.at(k).get<double>() << ',' << sigma.at(k).get<double>() << ',';
      if (have_pred) {
        out << number_at(report.at("prediction"), "field_sigma", k);
      }
      out << '\n';
    }
    written.push_back(path.string());
  }

  return written;
}

}  // namespace covsteer
