#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace fewcount {

// One manifest is written per CLI run: the command, a config snapshot, the
// seed, timestamps, output paths and a content hash of the inputs.
struct RunManifest {
    std::string command;
    nlohmann::json config_snapshot;
    uint64_t seed = 0;
    std::string started_at;
    std::string finished_at;
    std::vector<std::string> inputs;
    std::string input_hash; // combined SHA-1 over the input files
    std::vector<std::string> outputs;
};

std::string iso8601_now();

// SHA-1 over (path, content-hash) pairs of the listed files, order-independent.
std::string hash_inputs(const std::vector<std::string>& paths);

void write_manifest(const std::string& path, const RunManifest& m);

} // namespace fewcount
