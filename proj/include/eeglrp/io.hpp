#pragma once

#include <string>

#include "eeglrp/lrp.hpp"
#include "eeglrp/model.hpp"
#include "eeglrp/report.hpp"
#include "eeglrp/signal.hpp"

namespace eeglrp {

// Versioned binary containers: 8-byte magic, u32 version, u64 header length,
// JSON header, little-endian payload. Recordings carry float32 samples; all
// other tensors are float64 and round-trip bit-exactly.

void save_recording(const Recording& rec, const std::string& path);
Recording load_recording(const std::string& path);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void save_attribution(const AttributionResult& res, const std::string& path);
AttributionResult load_attribution(const std::string& path);

void save_aggregate(const AggregatePattern& p, const std::string& path);
AggregatePattern load_aggregate(const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace eeglrp
