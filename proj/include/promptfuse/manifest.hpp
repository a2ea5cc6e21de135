#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptfuse/error.hpp"
#include "promptfuse/rng.hpp"

namespace promptfuse {

namespace fs = std::filesystem;

/// Class labels. The numeric value is the class index used by the classifier.
enum class Label : int { malicious = 0, benign = 1 };

inline constexpr std::array<Label, 2> kLabels{Label::malicious, Label::benign};

constexpr std::string_view to_string(Label label) noexcept {
    return label == Label::malicious ? "malicious" : "benign";
}

inline std::optional<Label> parse_label(std::string_view text) {
    if (text == "malicious") return Label::malicious;
    if (text == "benign") return Label::benign;
    return std::nullopt;
}

/// Class names in class-index order; these are what the text branch encodes.
inline std::vector<std::string> class_names() {
    return {std::string(to_string(Label::malicious)), std::string(to_string(Label::benign))};
}

enum class Split { train, test };

constexpr std::string_view to_string(Split split) noexcept {
    return split == Split::train ? "train" : "test";
}

struct ManifestEntry {
    std::string id;
    Label label = Label::benign;
    fs::path frames_dir;  // resolved against the manifest directory
    fs::path audio_path;  // resolved against the manifest directory
    std::optional<Split> split;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

using ClassCounts = std::map<Label, std::size_t>;

struct DatasetSplit {
    std::vector<ManifestEntry> entries;
    ClassCounts class_counts;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
};

struct FewShotSpec {
    std::size_t k = 0;
    std::uint64_t seed = 0;
};

/// Counts per class; classes with no entries map to 0.
inline ClassCounts class_distribution(const std::vector<ManifestEntry>& entries) {
    ClassCounts counts;
    for (Label l : kLabels) counts[l] = 0;
    for (const auto& e : entries) ++counts[e.label];
    return counts;
}

inline DatasetSplit make_split(std::vector<ManifestEntry> entries) {
    DatasetSplit split;
    split.class_counts = class_distribution(entries);
    split.entries = std::move(entries);
    return split;
}

namespace detail {

inline std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw ParseError("manifest line " + std::to_string(line) + ": missing or non-string field \"" +
                         key + "\"");
    return it->get<std::string>();
}

}  // namespace detail

/// Parses one manifest line. `base` is the directory relative paths resolve against.
inline ManifestEntry parse_manifest_line(std::string_view text, const fs::path& base, std::size_t line) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("manifest line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object())
        throw ParseError("manifest line " + std::to_string(line) + ": expected a JSON object");

    ManifestEntry entry;
    entry.id = detail::required_string(obj, "id", line);
    if (entry.id.empty()) throw ParseError("manifest line " + std::to_string(line) + ": empty id");

    const auto label = detail::required_string(obj, "label", line);
    const auto parsed = parse_label(label);
    if (!parsed)
        throw ParseError("manifest line " + std::to_string(line) + ": unknown label \"" + label + "\"");
    entry.label = *parsed;

    const auto resolve = [&](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path : (base / path).lexically_normal();
    };
    entry.frames_dir = resolve(detail::required_string(obj, "frames_dir", line));
    entry.audio_path = resolve(detail::required_string(obj, "audio", line));

    if (auto it = obj.find("split"); it != obj.end() && !it->is_null()) {
        if (!it->is_string())
            throw ParseError("manifest line " + std::to_string(line) + ": split must be a string or null");
        const auto s = it->get<std::string>();
        if (s == "train")
            entry.split = Split::train;
        else if (s == "test")
            entry.split = Split::test;
        else
            throw ParseError("manifest line " + std::to_string(line) + ": unknown split \"" + s + "\"");
    }
    return entry;
}

/// Throws ValidationError naming the first repeated id.
inline void check_unique_ids(const std::vector<ManifestEntry>& entries) {
    std::set<std::string_view> seen;
    for (const auto& e : entries)
        if (!seen.insert(e.id).second) throw ValidationError("duplicate id \"" + e.id + "\" in manifest");
}

/// Loads a JSON-lines manifest, preserving file order. Blank lines are skipped.
inline std::vector<ManifestEntry> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

    std::vector<ManifestEntry> entries;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;
        entries.push_back(parse_manifest_line(text, base, line));
    }
    if (in.bad()) throw IoError("read error on manifest " + path.string());
    check_unique_ids(entries);
    return entries;
}

/// Serialises one entry; paths are written relative to `base` when possible.
inline std::string to_manifest_line(const ManifestEntry& e, const fs::path& base) {
    const auto rel = [&](const fs::path& p) {
        const auto abs_base = fs::absolute(base).lexically_normal();
        auto r = fs::absolute(p).lexically_normal().lexically_relative(abs_base);
        return (r.empty() ? p : r).generic_string();
    };
    nlohmann::ordered_json obj;
    obj["id"] = e.id;
    obj["label"] = std::string(to_string(e.label));
    obj["frames_dir"] = rel(e.frames_dir);
    obj["audio"] = rel(e.audio_path);
    obj["split"] = e.split ? nlohmann::ordered_json(std::string(to_string(*e.split))) : nlohmann::ordered_json();
    return obj.dump();
}

inline void save_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
    const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!base.empty()) fs::create_directories(base);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write manifest " + path.string());
    for (const auto& e : entries) out << to_manifest_line(e, base) << '\n';
    if (!out) throw IoError("write error on manifest " + path.string());
}

/// Stratified random split. Per class, round(n_c * test_fraction) entries go to
/// test; both halves keep the input order.
inline std::pair<DatasetSplit, DatasetSplit> make_splits(const std::vector<ManifestEntry>& entries,
                                                         double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0))
        throw ValidationError("test_fraction must lie in [0, 1]");
    if (entries.empty()) throw ValidationError("cannot split an empty manifest");

    auto rng = derive_rng(seed, "make_splits");
    std::vector<bool> is_test(entries.size(), false);
    for (Label label : kLabels) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].label == label) idx.push_back(i);
        shuffle(idx, rng);
        const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
        for (std::size_t j = 0; j < n_test; ++j) is_test[idx[j]] = true;
    }

    std::vector<ManifestEntry> train, test;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto e = entries[i];
        e.split = is_test[i] ? Split::test : Split::train;
        (is_test[i] ? test : train).push_back(std::move(e));
    }
    return {make_split(std::move(train)), make_split(std::move(test))};
}

/// Splits by the manifest's own tags when every entry carries one, otherwise
/// draws a fresh stratified split. A partially tagged manifest is rejected.
inline std::pair<DatasetSplit, DatasetSplit> resolve_splits(const std::vector<ManifestEntry>& entries,
                                                            double test_fraction, std::uint64_t seed) {
    const auto tagged = std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.split.has_value(); });
    if (tagged == 0) return make_splits(entries, test_fraction, seed);
    if (static_cast<std::size_t>(tagged) != entries.size())
        throw ValidationError("manifest mixes tagged and untagged split fields");
    std::vector<ManifestEntry> train, test;
    for (const auto& e : entries) (*e.split == Split::train ? train : test).push_back(e);
    return {make_split(std::move(train)), make_split(std::move(test))};
}

/// Draws exactly k entries per class uniformly without replacement. Output is
/// class-major (malicious first) with each class in its original order.
inline DatasetSplit few_shot_sample(const DatasetSplit& train, const FewShotSpec& spec) {
    auto rng = derive_rng(spec.seed, "few_shot_sample");
    std::vector<ManifestEntry> picked;
    for (Label label : kLabels) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < train.entries.size(); ++i)
            if (train.entries[i].label == label) idx.push_back(i);
        if (idx.size() < spec.k)
            throw DataError("insufficient samples for class \"" + std::string(to_string(label)) + "\": need " +
                            std::to_string(spec.k) + ", have " + std::to_string(idx.size()));
        // Partial Fisher-Yates: the first k slots become a uniform k-subset.
        for (std::size_t j = 0; j < spec.k; ++j) {
            const auto r = j + rng.below(idx.size() - j);
            std::swap(idx[j], idx[r]);
        }
        std::vector<std::size_t> chosen(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.k));
        std::sort(chosen.begin(), chosen.end());
        for (auto i : chosen) picked.push_back(train.entries[i]);
    }
    return make_split(std::move(picked));
}

}  // namespace promptfuse
