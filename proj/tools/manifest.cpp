#include "manifest.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>
#include <utility>

#include "stackdid/digest.hpp"
#include "stackdid/errors.hpp"
#include "stackdid/kv.hpp"
#include "stackdid/version.hpp"

namespace stackdid::cli {

namespace {

std::string utc_now() {
    std::time_t now = std::time(nullptr);
    std::tm parts{};
    gmtime_r(&now, &parts);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", parts.tm_year + 1900,
                  parts.tm_mon + 1, parts.tm_mday, parts.tm_hour, parts.tm_min, parts.tm_sec);
    return buf;
}

}  // namespace

void RunManifest::add_config(std::string key, std::string value) {
    config.emplace_back(std::move(key), std::move(value));
}

void RunManifest::add_config(std::string key, double value) {
    config.emplace_back(std::move(key), format_double(value));
}

void RunManifest::add_config(std::string key, std::int64_t value) {
    config.emplace_back(std::move(key), std::to_string(value));
}

void RunManifest::add_input(const std::string& name, const std::string& path) {
    inputs.emplace_back(name, fnv1a64_hex(read_file_bytes(path)));
}

void RunManifest::stamp(kv_document& doc) const {
    doc.set("manifest.command", command);
    doc.set("manifest.tool_version", std::string(version_string));
    doc.set("manifest.prng", std::string(prng_id));
    if (seed) doc.set("manifest.seed", std::to_string(*seed));
    for (const auto& [key, value] : config) doc.set("manifest.config." + key, value);
    for (const auto& [name, digest] : inputs) doc.set("manifest.input." + name, digest);
    doc.set("manifest.created", utc_now());
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw io_error("failed reading '" + path + "'");
    return std::move(buf).str();
}

}  // namespace stackdid::cli
