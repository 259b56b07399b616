#pragma once

#include <string>
#include <vector>

#include "czsl/composition.hpp"
#include "czsl/rng.hpp"

namespace czsl {

enum class Split { Train, Val, Test };
const char* split_name(Split s);

// Synthetic task: each sample is an object prototype with a state transform
// applied to a contiguous coordinate span plus noise. `locality` is the
// fraction of feature coordinates a state perturbs - small values make state
// evidence fine-grained and local.
struct SyntheticTaskSpec {
    int states = 8;
    int objects = 10;
    int input_dim = 64;
    int samples_per_pair = 50;  // train samples per seen pair
    int val_per_pair = 8;
    int test_per_pair = 12;
    double unseen_ratio = 0.25;
    double unused_ratio = 0.0;  // pairs excluded from both seen and unseen
    double locality = 0.15;
    double noise = 0.25;
    double state_strength = 1.0;
    uint64_t seed = 1;

    void validate() const;
};

struct SampleSet {
    std::vector<int> state_label;
    std::vector<int> object_label;
    std::vector<std::string> ids;
    std::vector<double> features;  // [n, input_dim] row-major; empty if metadata-only

    int size() const { return static_cast<int>(state_label.size()); }
};

struct SplitCounts {
    int seen_pairs = 0;
    int unseen_pairs = 0;  // zero for train
    long samples = 0;
};

struct SplitManifest {
    SplitCounts train, val, test;
};

struct Dataset {
    std::string name;
    CompositionSpace space;  // seen = train pairs, unseen = held-out eval pairs
    int input_dim = 0;
    SampleSet train, val, test;
    std::vector<Pair> val_pairs;   // sorted; seen/unseen membership via space
    std::vector<Pair> test_pairs;  // sorted

    const SampleSet& split(Split s) const;
    bool has_features() const { return !train.features.empty() || !val.features.empty(); }
    SplitManifest manifest() const;
};

Dataset gen_synthetic(const SyntheticTaskSpec& spec);

// Directory layout: train_pairs.txt / val_pairs.txt / test_pairs.txt (one
// "state object" pair per line) plus samples.txt (one "id state object split"
// record per line) and optionally features.bin.
Dataset load_split_dir(const std::string& dir);
void save_split_dir(const Dataset& data, const std::string& dir);

}  // namespace czsl
