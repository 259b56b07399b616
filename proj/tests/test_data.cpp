#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "czsl/data.hpp"
#include "czsl/rng.hpp"

using namespace czsl;
namespace fs = std::filesystem;

namespace {

std::string splits_dir(const char* name) {
    return std::string(CZSL_SOURCE_DIR) + "/data/splits/" + name;
}

// Ridge-regression linear probe (closed form, one-vs-all) used as a
// generator sanity oracle: with locality 1.0 the states must be separable
// from raw features.
double state_probe_accuracy(const Dataset& data) {
    const auto& train = data.train;
    const auto& test = data.test;
    int d = data.input_dim, n = train.size();
    int classes = data.space.num_states();
    int dim = d + 1;  // bias column
    std::vector<double> gram(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> rhs(static_cast<size_t>(dim) * classes, 0.0);
    auto x_at = [&](const SampleSet& set, int row, int col) {
        return col < d ? set.features[static_cast<size_t>(row) * d + col] : 1.0;
    };
    for (int r = 0; r < n; ++r) {
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j < dim; ++j)
                gram[static_cast<size_t>(i) * dim + j] += x_at(train, r, i) * x_at(train, r, j);
            rhs[static_cast<size_t>(i) * classes + train.state_label[static_cast<size_t>(r)]] +=
                x_at(train, r, i);
        }
    }
    for (int i = 0; i < dim; ++i) gram[static_cast<size_t>(i) * dim + i] += 1e-3;
    // Gaussian elimination solving gram * W = rhs.
    for (int col = 0; col < dim; ++col) {
        int pivot = col;
        for (int r = col + 1; r < dim; ++r)
            if (std::fabs(gram[static_cast<size_t>(r) * dim + col]) >
                std::fabs(gram[static_cast<size_t>(pivot) * dim + col]))
                pivot = r;
        for (int c = 0; c < dim; ++c)
            std::swap(gram[static_cast<size_t>(col) * dim + c], gram[static_cast<size_t>(pivot) * dim + c]);
        for (int c = 0; c < classes; ++c)
            std::swap(rhs[static_cast<size_t>(col) * classes + c], rhs[static_cast<size_t>(pivot) * classes + c]);
        double diag = gram[static_cast<size_t>(col) * dim + col];
        for (int r = 0; r < dim; ++r) {
            if (r == col) continue;
            double f = gram[static_cast<size_t>(r) * dim + col] / diag;
            for (int c = 0; c < dim; ++c)
                gram[static_cast<size_t>(r) * dim + c] -= f * gram[static_cast<size_t>(col) * dim + c];
            for (int c = 0; c < classes; ++c)
                rhs[static_cast<size_t>(r) * classes + c] -= f * rhs[static_cast<size_t>(col) * classes + c];
        }
    }
    std::vector<double> w(static_cast<size_t>(dim) * classes);
    for (int r = 0; r < dim; ++r)
        for (int c = 0; c < classes; ++c)
            w[static_cast<size_t>(r) * classes + c] =
                rhs[static_cast<size_t>(r) * classes + c] / gram[static_cast<size_t>(r) * dim + r];
    int hits = 0;
    for (int r = 0; r < test.size(); ++r) {
        int best = 0;
        double best_v = -1e300;
        for (int c = 0; c < classes; ++c) {
            double score = 0.0;
            for (int i = 0; i < dim; ++i)
                score += x_at(test, r, i) * w[static_cast<size_t>(i) * classes + c];
            if (score > best_v) {
                best_v = score;
                best = c;
            }
        }
        if (best == test.state_label[static_cast<size_t>(r)]) ++hits;
    }
    return static_cast<double>(hits) / test.size();
}

}  // namespace

TEST_CASE("bundled manifests reproduce the published split statistics") {
    struct Expect {
        const char* name;
        int states, objects;
        SplitCounts train, val, test;
    };
    const Expect table[] = {
        {"mit_states", 115, 245, {1262, 0, 30338}, {300, 300, 10420}, {400, 400, 12995}},
        {"ut_zappos", 16, 12, {83, 0, 22998}, {15, 15, 3214}, {18, 18, 2914}},
        {"cgqa", 453, 870, {5592, 0, 26920}, {1252, 1040, 7280}, {888, 923, 5098}},
    };
    for (const auto& e : table) {
        CAPTURE(e.name);
        auto data = load_split_dir(splits_dir(e.name));
        CHECK(data.space.num_states() == e.states);
        CHECK(data.space.num_objects() == e.objects);
        auto m = data.manifest();
        CHECK(m.train.seen_pairs == e.train.seen_pairs);
        CHECK(m.train.samples == e.train.samples);
        CHECK(m.val.seen_pairs == e.val.seen_pairs);
        CHECK(m.val.unseen_pairs == e.val.unseen_pairs);
        CHECK(m.val.samples == e.val.samples);
        CHECK(m.test.seen_pairs == e.test.seen_pairs);
        CHECK(m.test.unseen_pairs == e.test.unseen_pairs);
        CHECK(m.test.samples == e.test.samples);
        CHECK_FALSE(data.has_features());
    }
}

TEST_CASE("loader counting is order-independent") {
    auto src = splits_dir("ut_zappos");
    auto tmp = fs::temp_directory_path() / "czsl_shuffled_manifest";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    RngStream rng(99);
    for (const char* file :
         {"train_pairs.txt", "val_pairs.txt", "test_pairs.txt", "samples.txt"}) {
        std::ifstream in(src + "/" + file);
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
        rng.shuffle(lines);
        std::ofstream out(tmp / file);
        for (const auto& l : lines) out << l << "\n";
    }
    auto a = load_split_dir(src);
    auto b = load_split_dir(tmp.string());
    auto ma = a.manifest(), mb = b.manifest();
    CHECK(ma.train.seen_pairs == mb.train.seen_pairs);
    CHECK(ma.val.unseen_pairs == mb.val.unseen_pairs);
    CHECK(ma.test.samples == mb.test.samples);
    CHECK(a.space.seen_pairs.size() == b.space.seen_pairs.size());
    fs::remove_all(tmp);
}

TEST_CASE("loader rejects malformed manifests") {
    auto tmp = fs::temp_directory_path() / "czsl_bad_manifest";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    auto write = [&](const char* file, const std::string& content) {
        std::ofstream(tmp / file) << content;
    };
    write("train_pairs.txt", "red car\nwet dog\n");
    write("val_pairs.txt", "red car\nwet car\n");
    write("test_pairs.txt", "red dog\n");

    SUBCASE("unknown token in sample index") {
        write("samples.txt", "x0 red car train\nx1 blue car train\n");
        CHECK_THROWS_AS(load_split_dir(tmp.string()), VocabularyError);
    }
    SUBCASE("duplicate pair lines") {
        write("train_pairs.txt", "red car\nred car\n");
        write("samples.txt", "x0 red car train\n");
        CHECK_THROWS_AS(load_split_dir(tmp.string()), IntegrityError);
    }
    SUBCASE("sample pair missing from its split list") {
        write("samples.txt", "x0 wet dog val\n");
        CHECK_THROWS_AS(load_split_dir(tmp.string()), IntegrityError);
    }
    SUBCASE("unknown split tag") {
        write("samples.txt", "x0 red car dev\n");
        CHECK_THROWS_AS(load_split_dir(tmp.string()), IntegrityError);
    }
    fs::remove_all(tmp);
}

TEST_CASE("generator determinism") {
    SyntheticTaskSpec spec;
    spec.states = 4;
    spec.objects = 5;
    spec.input_dim = 24;
    spec.samples_per_pair = 3;
    spec.val_per_pair = 2;
    spec.test_per_pair = 2;
    spec.seed = 42;
    auto a = gen_synthetic(spec);
    auto b = gen_synthetic(spec);
    CHECK(a.train.features == b.train.features);
    CHECK(a.val.features == b.val.features);
    CHECK(a.test.features == b.test.features);
    CHECK(a.space.seen_pairs == b.space.seen_pairs);
    CHECK(a.space.unseen_pairs == b.space.unseen_pairs);

    spec.seed = 43;
    auto c = gen_synthetic(spec);
    CHECK(a.train.features != c.train.features);
}

TEST_CASE("noise-free single-sample generation is duplicate-free and counted") {
    SyntheticTaskSpec spec;
    spec.states = 3;
    spec.objects = 4;
    spec.input_dim = 16;
    spec.samples_per_pair = 1;
    spec.val_per_pair = 1;
    spec.test_per_pair = 1;
    spec.noise = 0.0;
    spec.unseen_ratio = 0.25;
    spec.seed = 7;
    auto data = gen_synthetic(spec);
    int n_pairs = 12;
    int n_unseen = 3;  // round(0.25 * 12)
    CHECK(static_cast<int>(data.space.unseen_pairs.size()) == n_unseen);
    CHECK(data.train.size() == n_pairs - n_unseen);
    CHECK(data.val.size() == n_pairs);
    CHECK(data.test.size() == n_pairs);

    auto distinct_rows = [&](const SampleSet& set) {
        std::set<std::vector<double>> rows;
        for (int i = 0; i < set.size(); ++i)
            rows.insert(std::vector<double>(
                set.features.begin() + static_cast<int64_t>(i) * spec.input_dim,
                set.features.begin() + static_cast<int64_t>(i + 1) * spec.input_dim));
        return static_cast<int>(rows.size());
    };
    CHECK(distinct_rows(data.train) == data.train.size());
    CHECK(distinct_rows(data.val) == data.val.size());
    CHECK(distinct_rows(data.test) == data.test.size());
}

TEST_CASE("every primitive keeps at least one seen pair") {
    SyntheticTaskSpec spec;
    spec.states = 5;
    spec.objects = 6;
    spec.input_dim = 8;
    spec.samples_per_pair = 1;
    spec.val_per_pair = 1;
    spec.test_per_pair = 1;
    spec.unseen_ratio = 0.4;
    spec.unused_ratio = 0.2;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        spec.seed = seed;
        auto data = gen_synthetic(spec);
        std::set<int> states, objects;
        for (const Pair& p : data.space.seen_pairs) {
            states.insert(p.state);
            objects.insert(p.object);
        }
        CHECK(static_cast<int>(states.size()) == spec.states);
        CHECK(static_cast<int>(objects.size()) == spec.objects);
        // Unseen primitives all appear in the seen set too.
        for (const Pair& p : data.space.unseen_pairs) {
            CHECK(states.count(p.state) == 1);
            CHECK(objects.count(p.object) == 1);
        }
    }
}

TEST_CASE("infeasible holdout requests fail loudly") {
    SyntheticTaskSpec spec;
    spec.states = 2;
    spec.objects = 2;
    spec.input_dim = 4;
    spec.unseen_ratio = 0.8;  // cannot keep every primitive covered
    CHECK_THROWS_AS(gen_synthetic(spec), GenerationError);
}

TEST_CASE("full-coverage states are linearly separable from raw features") {
    SyntheticTaskSpec spec;
    spec.states = 4;
    spec.objects = 5;
    spec.input_dim = 32;
    spec.samples_per_pair = 20;
    spec.val_per_pair = 2;
    spec.test_per_pair = 10;
    spec.locality = 1.0;  // state perturbs every coordinate
    spec.noise = 0.2;
    spec.seed = 11;
    auto data = gen_synthetic(spec);
    CHECK(state_probe_accuracy(data) >= 0.9);
}

TEST_CASE("synthetic dataset round-trips through a split directory") {
    SyntheticTaskSpec spec;
    spec.states = 3;
    spec.objects = 3;
    spec.input_dim = 8;
    spec.samples_per_pair = 2;
    spec.val_per_pair = 1;
    spec.test_per_pair = 1;
    spec.seed = 9;
    auto data = gen_synthetic(spec);
    auto tmp = fs::temp_directory_path() / "czsl_roundtrip";
    fs::remove_all(tmp);
    save_split_dir(data, tmp.string());
    auto loaded = load_split_dir(tmp.string());
    CHECK(loaded.space.seen_pairs == data.space.seen_pairs);
    CHECK(loaded.space.unseen_pairs == data.space.unseen_pairs);
    CHECK(loaded.train.features == data.train.features);
    CHECK(loaded.val.features == data.val.features);
    CHECK(loaded.test.features == data.test.features);
    CHECK(loaded.train.state_label == data.train.state_label);
    auto ma = data.manifest(), mb = loaded.manifest();
    CHECK(ma.val.seen_pairs == mb.val.seen_pairs);
    CHECK(ma.val.unseen_pairs == mb.val.unseen_pairs);
    fs::remove_all(tmp);
}
