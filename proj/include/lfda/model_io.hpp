#pragma once

// Self-describing JSON model files. Doubles are written in shortest
// round-trip form, so save -> load -> save reproduces the file byte for byte.

#include "lfda/prediction.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace lfda {

inline constexpr int kModelSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

std::string serialize_model(const FittedModel& model);

/// Throws ParseError for malformed text and SchemaError for a missing field or
/// a schema_version other than kModelSchemaVersion.
FittedModel deserialize_model(const std::string& text);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

}  // namespace lfda
