#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "metadiffub/exploiter.hpp"
#include "metadiffub/params.hpp"
#include "metadiffub/scheduler.hpp"
#include "metadiffub/text_data.hpp"

namespace metadiffub {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container: magic "MDFB", version, kind, key=value
/// config, vocabulary, dataset tag, then named raw double arrays.
struct Checkpoint {
  std::string kind;  // "exploiter" or "scheduler"
  std::map<std::string, std::string> config;
  TokenList vocab;   // non-reserved tokens in id order
  std::string dataset_tag;
  ParamSet params;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_exploiter(const std::filesystem::path& path, const Exploiter& model,
                    const std::string& dataset_tag);
Exploiter load_exploiter(const std::filesystem::path& path, std::string* dataset_tag = nullptr);

void save_scheduler(const std::filesystem::path& path, const Scheduler& scheduler,
                    const std::string& dataset_tag);
Scheduler load_scheduler(const std::filesystem::path& path, std::string* dataset_tag = nullptr);

}  // namespace metadiffub
