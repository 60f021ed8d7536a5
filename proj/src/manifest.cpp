#include "fewcount/manifest.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>

#include "fewcount/errors.hpp"
#include "fewcount/sha1.hpp"

namespace fewcount {

std::string iso8601_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hash_inputs(const std::vector<std::string>& paths) {
    std::vector<std::string> lines;
    lines.reserve(paths.size());
    for (const std::string& p : paths) lines.push_back(p + " " + sha1_file_hex(p));
    std::sort(lines.begin(), lines.end());
    Sha1 h;
    for (const std::string& l : lines) {
        h.update(l);
        h.update("\n", 1);
    }
    return h.hex_digest();
}

void write_manifest(const std::string& path, const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config_snapshot;
    j["seed"] = m.seed;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["inputs"] = m.inputs;
    j["input_hash"] = m.input_hash;
    j["outputs"] = m.outputs;
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path);
    out << j.dump(2) << "\n";
}

} // namespace fewcount
