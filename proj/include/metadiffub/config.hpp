#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metadiffub/exploiter.hpp"
#include "metadiffub/meta_training.hpp"
#include "metadiffub/scheduler.hpp"

namespace metadiffub {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

/// Every tunable key with its default, in a fixed order.
const std::vector<ConfigKey>& config_keys();

/// Merged key=value configuration. Precedence: defaults < file < set().
class RunConfig {
 public:
  RunConfig();

  // Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  // `key=value` lines; blank lines and lines starting with '#' are skipped.
  void load_file(const std::filesystem::path& path);
  void set_assignment(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // All keys in declaration order, one `key=value` per line.
  std::string resolved() const;

 private:
  std::map<std::string, std::string> values_;
};

ExploiterConfig exploiter_config(const RunConfig& cfg);
SchedulerConfig scheduler_config(const RunConfig& cfg);
TrainConfig train_config(const RunConfig& cfg);

}  // namespace metadiffub
