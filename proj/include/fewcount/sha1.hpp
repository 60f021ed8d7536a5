#pragma once

#include <cstdint>
#include <string>

namespace fewcount {

// Incremental SHA-1, used for content hashes in run manifests.
class Sha1 {
public:
    Sha1();
    void update(const void* data, size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    std::string hex_digest(); // finalises; do not update afterwards

private:
    void process_block(const uint8_t* block);
    uint32_t h_[5];
    uint8_t buffer_[64];
    size_t buffer_len_ = 0;
    uint64_t total_len_ = 0;
};

std::string sha1_hex(const std::string& data);
std::string sha1_file_hex(const std::string& path); // throws on IO failure

} // namespace fewcount
