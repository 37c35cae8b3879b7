#pragma once

#include <filesystem>
#include <string_view>

namespace parscale {

// Writes to a sibling temp file, flushes, then renames over `path`, so readers
// never observe a partial file. Throws InputError on I/O failure.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace parscale
