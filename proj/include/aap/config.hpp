#pragma once

#include <filesystem>

#include "aap/canonical.hpp"
#include "aap/common.hpp"

namespace aap {

// Operational knobs the underlying policy leaves open. Everything here has
// a default; a store-level config.json or --config file can override.
struct Config {
  double alpha = 0.01;              // significance level for discrepancy tests
  int min_group_size = 20;          // smallest group for fairness statistics
  int batch_size = 64;              // protocol query batch size
  int timeout_ms = 30000;           // per-batch client response timeout
  double novelty_fraction = 0.1;    // default injected-novelty fraction
  double influence_flag_factor = 2.0;  // cross-system influence flag threshold
  int influence_sample_count = 1000;   // context draws per explanation in audits
  int influence_records = 5;           // fold records explained per audit
  double nonproportion_tolerance = 0.1;  // |diff| warning level for non-proportion measures

  Json to_json() const {
    return Json{{"alpha", alpha},
                {"min_group_size", min_group_size},
                {"batch_size", batch_size},
                {"timeout_ms", timeout_ms},
                {"novelty_fraction", novelty_fraction},
                {"influence_flag_factor", influence_flag_factor},
                {"influence_sample_count", influence_sample_count},
                {"influence_records", influence_records},
                {"nonproportion_tolerance", nonproportion_tolerance}};
  }

  static Config from_json(const Json& j) {
    Config c;
    c.alpha = j.value("alpha", c.alpha);
    c.min_group_size = j.value("min_group_size", c.min_group_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.novelty_fraction = j.value("novelty_fraction", c.novelty_fraction);
    c.influence_flag_factor = j.value("influence_flag_factor", c.influence_flag_factor);
    c.influence_sample_count = j.value("influence_sample_count", c.influence_sample_count);
    c.influence_records = j.value("influence_records", c.influence_records);
    c.nonproportion_tolerance = j.value("nonproportion_tolerance", c.nonproportion_tolerance);
    return c;
  }

  static Config load_or_default(const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) return Config{};
    return from_json(read_json_file(p));
  }
};

}  // namespace aap
