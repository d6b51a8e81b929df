#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stackdid {
class kv_document;
}

namespace stackdid::cli {

/// Provenance block appended to every output document: the subcommand, the
/// resolved settings that determine the result, digests of every input
/// file, the seed when one is in play, and the tool/generator identity.
///
/// Everything here except the creation timestamp is a pure function of the
/// inputs, so two runs with the same inputs and seed produce byte-identical
/// documents once the manifest.created line is ignored. Settings that
/// cannot change the result (the worker count, output destination) are
/// deliberately not recorded.
struct RunManifest {
    std::string command;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, std::string>> inputs;  // name -> digest
    std::optional<std::uint64_t> seed;

    void add_config(std::string key, std::string value);
    void add_config(std::string key, double value);
    void add_config(std::string key, std::int64_t value);

    /// Digests the file's bytes. Throws io_error when unreadable.
    void add_input(const std::string& name, const std::string& path);

    /// Appends the manifest.* keys to a finished document.
    void stamp(kv_document& doc) const;
};

/// Whole-file read used for digests and document loading.
[[nodiscard]] std::string read_file_bytes(const std::string& path);

}  // namespace stackdid::cli
