#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "enformer/nn/module.hpp"
#include "enformer/nn/weights.hpp"
#include "enformer/train/optimizer.hpp"

namespace enformer {

struct CheckpointMeta {
  int64_t epoch = 0;
  double val_dice = 0.0;
  std::string config_hash;
  uint64_t seed = 0;
  std::string rng_state;
};

// FNV-1a 64-bit over the resolved config text; checkpoints record it so a
// mismatched restore is caught instead of silently mixing configurations.
inline std::string config_fingerprint(const std::string& text) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline void rename_over(const std::string& from, const std::string& to) {
  if (std::rename(from.c_str(), to.c_str()) != 0)
    throw std::runtime_error("cannot move '" + from + "' into place at '" + to + "'");
}

}  // namespace detail

// Checkpoint = binary record manifest (parameters, buffers, optimizer moments)
// plus a JSON sidecar at <path>.json with run metadata. Both files are written
// to temporaries and renamed so readers never see a half-written checkpoint.
template <typename T>
void save_checkpoint(const std::string& path, Module<T>& model, const AdamW<T>* opt,
                     const CheckpointMeta& meta) {
  std::vector<WeightRecord> records = records_from_module(model);
  if (opt) {
    auto extra = opt->state_records();
    records.insert(records.end(), extra.begin(), extra.end());
  }
  write_weights_file(path + ".tmp", records, 8);
  detail::rename_over(path + ".tmp", path);

  nlohmann::json side{{"format", 1},
                      {"epoch", meta.epoch},
                      {"val_dice", meta.val_dice},
                      {"config_hash", meta.config_hash},
                      {"seed", meta.seed},
                      {"rng_state", meta.rng_state}};
  const std::string side_path = path + ".json";
  {
    std::ofstream os(side_path + ".tmp", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint sidecar: " + side_path);
    os << side.dump(2) << "\n";
  }
  detail::rename_over(side_path + ".tmp", side_path);
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
  const std::string side_path = path + ".json";
  std::ifstream is(side_path);
  if (!is) throw std::runtime_error("checkpoint sidecar missing: " + side_path);
  nlohmann::json side;
  try {
    is >> side;
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint sidecar unreadable: " + side_path + " (" + e.what() + ")");
  }
  CheckpointMeta meta;
  meta.epoch = side.at("epoch").get<int64_t>();
  meta.val_dice = side.at("val_dice").get<double>();
  meta.config_hash = side.at("config_hash").get<std::string>();
  meta.seed = side.at("seed").get<uint64_t>();
  meta.rng_state = side.value("rng_state", std::string());
  return meta;
}

// Restores parameters, buffers, and (when given) optimizer state. A config
// fingerprint different from expected_config_hash is refused unless the caller
// passes allow_config_mismatch, in which case a warning is printed instead.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, Module<T>& model, AdamW<T>* opt,
                               const std::string& expected_config_hash = "",
                               bool allow_config_mismatch = false) {
  CheckpointMeta meta = read_checkpoint_meta(path);
  if (!expected_config_hash.empty() && meta.config_hash != expected_config_hash) {
    if (!allow_config_mismatch)
      throw std::runtime_error("checkpoint config mismatch: checkpoint was written under config " +
                               meta.config_hash + " but the current config hashes to " +
                               expected_config_hash +
                               "; pass the config-mismatch override to load anyway");
    std::cerr << "warning: loading checkpoint written under config " << meta.config_hash
              << " into a run configured as " << expected_config_hash << "\n";
  }
  std::vector<WeightRecord> records = read_weights_file(path);
  std::vector<WeightRecord> model_records, opt_records;
  for (auto& r : records) {
    if (r.name.rfind("opt.", 0) == 0)
      opt_records.push_back(std::move(r));
    else
      model_records.push_back(std::move(r));
  }
  load_into_module(model, model_records, true);
  if (opt) opt->load_state(opt_records);
  return meta;
}

}  // namespace enformer
