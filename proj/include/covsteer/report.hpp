#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace covsteer {

// Renders a simulation report (the JSON produced by report_to_json) into flat
// CSV files under `out_dir`:
//   state_envelopes.csv   time, component, mc_mean, mc_sigma, lc_mean, lc_sigma
//   control_fan.csv       time, component, mc_mean, mc_sigma, lc_sigma, feedforward
//   deltav_histogram.csv  bin_lo, bin_hi, count          (when terminal costs exist)
//   density_envelope.csv  time, mc_sigma, model_sigma
// Missing model-side columns are left empty.  Returns the files written.
std::vector<std::string> write_csv_reports(const nlohmann::json& report,
                                           const std::string& out_dir);

}  // namespace covsteer
