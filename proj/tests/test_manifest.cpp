#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include <promptfuse/manifest.hpp>

#include "test_util.hpp"

using namespace promptfuse;
using testutil::TempDir;

namespace {

ManifestEntry entry(std::string id, Label label) {
    return {std::move(id), label, "frames/" + id, "audio/" + id + ".wav", std::nullopt};
}

std::vector<ManifestEntry> balanced(std::size_t per_class) {
    std::vector<ManifestEntry> out;
    for (std::size_t i = 0; i < per_class; ++i) {
        out.push_back(entry("m" + std::to_string(i), Label::malicious));
        out.push_back(entry("b" + std::to_string(i), Label::benign));
    }
    return out;
}

std::multiset<std::string> ids(const std::vector<ManifestEntry>& es) {
    std::multiset<std::string> s;
    for (const auto& e : es) s.insert(e.id);
    return s;
}

}  // namespace

TEST(Manifest, LoadsThreeLinesInOrderAndResolvesPaths) {
    TempDir dir;
    testutil::write_file(dir / "m.jsonl",
                         R"({"id": "v1", "label": "malicious", "frames_dir": "v1", "audio": "v1/a.wav", "split": "train"})"
                         "\n"
                         R"({"id": "v2", "label": "benign", "frames_dir": "v2", "audio": "v2/a.wav", "split": null})"
                         "\n\n"
                         R"({"id": "v0", "label": "benign", "frames_dir": "/abs/v0", "audio": "v0.wav"})"
                         "\n");
    const auto es = load_manifest(dir / "m.jsonl");
    ASSERT_EQ(es.size(), 3u);
    EXPECT_EQ(es[0].id, "v1");
    EXPECT_EQ(es[1].id, "v2");
    EXPECT_EQ(es[2].id, "v0");
    EXPECT_EQ(es[0].label, Label::malicious);
    EXPECT_EQ(es[0].split, Split::train);
    EXPECT_FALSE(es[1].split.has_value());
    EXPECT_EQ(es[0].frames_dir, dir.path() / "v1");
    EXPECT_EQ(es[0].audio_path, dir.path() / "v1/a.wav");
    EXPECT_EQ(es[2].frames_dir, std::filesystem::path("/abs/v0"));
}

TEST(Manifest, DuplicateIdIsValidationErrorCitingId) {
    TempDir dir;
    const std::string line = R"({"id": "v1", "label": "benign", "frames_dir": "a", "audio": "a.wav"})";
    testutil::write_file(dir / "m.jsonl", line + "\n" + line + "\n");
    try {
        load_manifest(dir / "m.jsonl");
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("\"v1\""), std::string::npos) << e.what();
    }
}

TEST(Manifest, MissingFileIsIoError) {
    EXPECT_THROW(load_manifest("/nonexistent/manifest.jsonl"), IoError);
}

TEST(Manifest, MalformedLineNamesLineNumber) {
    TempDir dir;
    testutil::write_file(dir / "m.jsonl",
                         R"({"id": "a", "label": "benign", "frames_dir": "a", "audio": "a.wav"})"
                         "\n{not json\n");
    try {
        load_manifest(dir / "m.jsonl");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
}

TEST(Manifest, RejectsBadLabelAndMissingField) {
    EXPECT_THROW(parse_manifest_line(R"({"id": "a", "label": "neutral", "frames_dir": "a", "audio": "a"})", ".", 1),
                 ParseError);
    EXPECT_THROW(parse_manifest_line(R"({"id": "a", "label": "benign", "audio": "a"})", ".", 1), ParseError);
    EXPECT_THROW(parse_manifest_line(R"({"id": "a", "label": "benign", "frames_dir": "a", "audio": "a", "split": "dev"})",
                                     ".", 1),
                 ParseError);
}

TEST(Manifest, SaveLoadRoundTrip) {
    TempDir dir;
    auto es = balanced(2);
    for (auto& e : es) {
        e.frames_dir = dir.path() / "data" / e.id;
        e.audio_path = dir.path() / "data" / e.id / "audio.wav";
    }
    es[0].split = Split::test;
    save_manifest(es, dir / "m.jsonl");
    EXPECT_NE(testutil::read_file(dir / "m.jsonl").find("\"frames_dir\":\"data/m0\""), std::string::npos);
    EXPECT_EQ(load_manifest(dir / "m.jsonl"), es);
}

TEST(ClassDistribution, Examples) {
    const auto empty = class_distribution({});
    EXPECT_EQ(empty.at(Label::malicious), 0u);
    EXPECT_EQ(empty.at(Label::benign), 0u);
    const auto c = class_distribution({entry("a", Label::malicious), entry("b", Label::malicious), entry("c", Label::benign)});
    EXPECT_EQ(c.at(Label::malicious), 2u);
    EXPECT_EQ(c.at(Label::benign), 1u);
}

TEST(ClassDistribution, BundledMmobFixture) {
    const auto es = load_manifest(PROMPTFUSE_FIXTURE_DIR "/mmob_manifest.jsonl");
    EXPECT_EQ(es.size(), 1135u);
    const auto c = class_distribution(es);
    EXPECT_EQ(c.at(Label::malicious), 305u);
    EXPECT_EQ(c.at(Label::benign), 830u);
}

TEST(MakeSplits, StratifiedOnePerClass) {
    for (std::uint64_t seed : {0u, 1u, 99u}) {
        const auto [train, test] = make_splits(balanced(5), 0.2, seed);
        EXPECT_EQ(test.size(), 2u);
        EXPECT_EQ(test.class_counts.at(Label::malicious), 1u);
        EXPECT_EQ(test.class_counts.at(Label::benign), 1u);
        EXPECT_EQ(train.size(), 8u);
    }
}

TEST(MakeSplits, ZeroFractionKeepsInput) {
    const auto input = balanced(4);
    const auto [train, test] = make_splits(input, 0.0, 3);
    EXPECT_TRUE(test.empty());
    ASSERT_EQ(train.size(), input.size());
    for (std::size_t i = 0; i < input.size(); ++i) EXPECT_EQ(train.entries[i].id, input[i].id);
}

TEST(MakeSplits, DeterministicAndSeedSensitive) {
    const auto input = balanced(50);
    const auto a = make_splits(input, 0.3, 11);
    const auto b = make_splits(input, 0.3, 11);
    const auto c = make_splits(input, 0.3, 12);
    EXPECT_EQ(a.first.entries, b.first.entries);
    EXPECT_EQ(a.second.entries, b.second.entries);
    EXPECT_NE(ids(a.second.entries), ids(c.second.entries));
}

TEST(MakeSplits, PartitionPropertyAndCounts) {
    std::vector<ManifestEntry> input;
    for (int i = 0; i < 37; ++i) input.push_back(entry("m" + std::to_string(i), Label::malicious));
    for (int i = 0; i < 101; ++i) input.push_back(entry("b" + std::to_string(i), Label::benign));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto [train, test] = make_splits(input, 0.25, seed);
        auto all = ids(train.entries);
        const auto t = ids(test.entries);
        for (const auto& id : t) EXPECT_EQ(all.count(id), 0u) << "train and test overlap";
        all.insert(t.begin(), t.end());
        EXPECT_EQ(all, ids(input));
        const auto in = class_distribution(input);
        for (Label l : kLabels) EXPECT_EQ(train.class_counts.at(l) + test.class_counts.at(l), in.at(l));
        for (const auto& e : train.entries) EXPECT_EQ(e.split, Split::train);
        for (const auto& e : test.entries) EXPECT_EQ(e.split, Split::test);
    }
}

TEST(MakeSplits, Errors) {
    EXPECT_THROW(make_splits(balanced(2), 1.5, 0), ValidationError);
    EXPECT_THROW(make_splits(balanced(2), -0.1, 0), ValidationError);
    EXPECT_THROW(make_splits({}, 0.2, 0), ValidationError);
}

TEST(ResolveSplits, UsesTagsRejectsMixed) {
    auto es = balanced(3);
    for (std::size_t i = 0; i < es.size(); ++i) es[i].split = i < 2 ? Split::test : Split::train;
    const auto [train, test] = resolve_splits(es, 0.5, 0);
    EXPECT_EQ(test.size(), 2u);
    EXPECT_EQ(train.size(), 4u);
    es[3].split.reset();
    EXPECT_THROW(resolve_splits(es, 0.5, 0), ValidationError);
}

TEST(FewShot, ExamplesAndErrors) {
    const auto train = make_split(balanced(5));
    const auto two = few_shot_sample(train, {2, 7});
    EXPECT_EQ(two.size(), 4u);
    EXPECT_EQ(two.class_counts.at(Label::malicious), 2u);
    EXPECT_EQ(two.class_counts.at(Label::benign), 2u);
    EXPECT_TRUE(few_shot_sample(train, {0, 7}).empty());
    try {
        few_shot_sample(train, {16, 7});
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("malicious"), std::string::npos);
    }
}

TEST(FewShot, ExactCountsSubsetNoDuplicatesForStandardKs) {
    std::vector<ManifestEntry> input;
    for (int i = 0; i < 30; ++i) input.push_back(entry("m" + std::to_string(i), Label::malicious));
    for (int i = 0; i < 80; ++i) input.push_back(entry("b" + std::to_string(i), Label::benign));
    const auto train = make_split(input);
    const auto pool = ids(input);
    for (std::size_t k : {1u, 2u, 4u, 8u, 16u})
        for (std::uint64_t seed = 0; seed < 25; ++seed) {
            const auto s = few_shot_sample(train, {k, seed});
            EXPECT_EQ(s.class_counts.at(Label::malicious), k);
            EXPECT_EQ(s.class_counts.at(Label::benign), k);
            const auto got = ids(s.entries);
            EXPECT_EQ(std::set<std::string>(got.begin(), got.end()).size(), got.size());
            for (const auto& id : got) EXPECT_EQ(pool.count(id), 1u);
            EXPECT_EQ(few_shot_sample(train, {k, seed}).entries, s.entries);
        }
}

TEST(FewShot, UniformOverThousandSeeds) {
    std::vector<ManifestEntry> input;
    for (int i = 0; i < 10; ++i) {
        input.push_back(entry("m" + std::to_string(i), Label::malicious));
        input.push_back(entry("b" + std::to_string(i), Label::benign));
    }
    const auto train = make_split(input);
    std::map<std::string, int> hits;
    for (std::uint64_t seed = 0; seed < 1000; ++seed)
        for (const auto& e : few_shot_sample(train, {1, seed}).entries) ++hits[e.id];
    double chi2 = 0;
    for (int i = 0; i < 10; ++i) {
        const int h = hits["m" + std::to_string(i)];
        EXPECT_NEAR(h / 1000.0, 0.1, 0.03) << "entry m" << i;
        chi2 += (h - 100.0) * (h - 100.0) / 100.0;
    }
    EXPECT_LT(chi2, 21.67);  // chi-square 9 dof, p = 0.01
}
