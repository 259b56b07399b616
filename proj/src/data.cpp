#include "czsl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace czsl {

namespace fs = std::filesystem;

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        default: return "test";
    }
}

void SyntheticTaskSpec::validate() const {
    if (states < 2 || objects < 2)
        throw GenerationError("need at least 2 states and 2 objects");
    if (input_dim <= 0 || samples_per_pair <= 0 || val_per_pair < 0 || test_per_pair < 0)
        throw GenerationError("sample counts and input_dim must be positive");
    if (unseen_ratio <= 0.0 || unseen_ratio >= 1.0)
        throw GenerationError("unseen_ratio must lie in (0,1)");
    if (unused_ratio < 0.0 || unseen_ratio + unused_ratio >= 1.0)
        throw GenerationError("unseen_ratio + unused_ratio must stay below 1");
    if (locality <= 0.0 || locality > 1.0)
        throw GenerationError("locality must lie in (0,1]");
    if (noise < 0.0) throw GenerationError("noise must be nonnegative");
}

const SampleSet& Dataset::split(Split s) const {
    switch (s) {
        case Split::Train: return train;
        case Split::Val: return val;
        default: return test;
    }
}

SplitManifest Dataset::manifest() const {
    SplitManifest m;
    m.train.seen_pairs = static_cast<int>(space.seen_pairs.size());
    m.train.unseen_pairs = 0;
    m.train.samples = train.size();
    auto count = [&](const std::vector<Pair>& pairs, SplitCounts& c, long samples) {
        c.samples = samples;
        for (const Pair& p : pairs)
            (space.is_seen(p) ? c.seen_pairs : c.unseen_pairs) += 1;
    };
    count(val_pairs, m.val, val.size());
    count(test_pairs, m.test, test.size());
    return m;
}

namespace {

// Removes `target` pairs from `remaining` while keeping every state and
// object covered by at least one pair left behind.
std::vector<Pair> draw_covered_subset(std::vector<Pair>& remaining, int target, int num_states,
                                      int num_objects, RngStream& rng, const char* what) {
    std::vector<int> state_cover(static_cast<size_t>(num_states), 0);
    std::vector<int> object_cover(static_cast<size_t>(num_objects), 0);
    for (const Pair& p : remaining) {
        ++state_cover[static_cast<size_t>(p.state)];
        ++object_cover[static_cast<size_t>(p.object)];
    }
    std::vector<size_t> order(remaining.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<bool> taken(remaining.size(), false);
    std::vector<Pair> drawn;
    for (size_t idx : order) {
        if (static_cast<int>(drawn.size()) == target) break;
        const Pair& p = remaining[idx];
        if (state_cover[static_cast<size_t>(p.state)] <= 1 ||
            object_cover[static_cast<size_t>(p.object)] <= 1)
            continue;
        taken[idx] = true;
        drawn.push_back(p);
        --state_cover[static_cast<size_t>(p.state)];
        --object_cover[static_cast<size_t>(p.object)];
    }
    if (static_cast<int>(drawn.size()) < target)
        throw GenerationError(std::string("split infeasible: cannot hold out ") +
                              std::to_string(target) + " " + what +
                              " pairs without uncovering a state or object");
    std::vector<Pair> kept;
    for (size_t i = 0; i < remaining.size(); ++i)
        if (!taken[i]) kept.push_back(remaining[i]);
    remaining = std::move(kept);
    std::sort(drawn.begin(), drawn.end());
    return drawn;
}

}  // namespace

Dataset gen_synthetic(const SyntheticTaskSpec& spec) {
    spec.validate();
    Dataset data;
    data.name = "synthetic-" + std::to_string(spec.states) + "x" + std::to_string(spec.objects);
    data.input_dim = spec.input_dim;

    auto& space = data.space;
    for (int s = 0; s < spec.states; ++s) space.states.push_back("state_" + std::to_string(s));
    for (int o = 0; o < spec.objects; ++o) space.objects.push_back("object_" + std::to_string(o));

    int total = spec.states * spec.objects;
    int n_unseen = static_cast<int>(std::lround(spec.unseen_ratio * total));
    int n_unused = static_cast<int>(std::lround(spec.unused_ratio * total));
    if (n_unseen < 1) n_unseen = 1;

    auto split_rng = rng_stream(spec.seed, "data.split");
    std::vector<Pair> remaining;
    for (int s = 0; s < spec.states; ++s)
        for (int o = 0; o < spec.objects; ++o) remaining.push_back({s, o});
    space.unseen_pairs = draw_covered_subset(remaining, n_unseen, spec.states, spec.objects,
                                             split_rng, "unseen");
    if (n_unused > 0)
        draw_covered_subset(remaining, n_unused, spec.states, spec.objects, split_rng, "unused");
    space.seen_pairs = std::move(remaining);
    std::sort(space.seen_pairs.begin(), space.seen_pairs.end());
    space.validate();

    data.val_pairs = space.candidate_pairs(World::Closed);
    data.test_pairs = data.val_pairs;

    // Object prototypes and per-state local transforms.
    auto proto_rng = rng_stream(spec.seed, "data.prototypes");
    std::vector<std::vector<double>> prototypes(static_cast<size_t>(spec.objects));
    for (auto& v : prototypes) {
        v.resize(static_cast<size_t>(spec.input_dim));
        for (double& x : v) x = proto_rng.normal();
    }
    int span = std::max(1, static_cast<int>(std::lround(spec.locality * spec.input_dim)));
    span = std::min(span, spec.input_dim);
    std::vector<int> span_start(static_cast<size_t>(spec.states));
    std::vector<std::vector<double>> deltas(static_cast<size_t>(spec.states));
    for (int s = 0; s < spec.states; ++s) {
        span_start[static_cast<size_t>(s)] =
            static_cast<int>(proto_rng.next_u64() % static_cast<uint64_t>(spec.input_dim - span + 1));
        deltas[static_cast<size_t>(s)].resize(static_cast<size_t>(span));
        for (double& x : deltas[static_cast<size_t>(s)]) x = proto_rng.normal() * spec.state_strength;
    }

    auto sample_rng = rng_stream(spec.seed, "data.samples");
    long id_counter = 0;
    auto emit = [&](SampleSet& set, const Pair& p) {
        set.state_label.push_back(p.state);
        set.object_label.push_back(p.object);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "syn_%07ld", id_counter++);
        set.ids.emplace_back(buf);
        size_t base = set.features.size();
        set.features.resize(base + static_cast<size_t>(spec.input_dim));
        double* x = set.features.data() + base;
        const auto& proto = prototypes[static_cast<size_t>(p.object)];
        for (int i = 0; i < spec.input_dim; ++i) x[i] = proto[static_cast<size_t>(i)];
        int start = span_start[static_cast<size_t>(p.state)];
        const auto& delta = deltas[static_cast<size_t>(p.state)];
        for (int i = 0; i < span; ++i) x[start + i] += delta[static_cast<size_t>(i)];
        if (spec.noise > 0.0)
            for (int i = 0; i < spec.input_dim; ++i) x[i] += sample_rng.normal() * spec.noise;
    };

    for (const Pair& p : space.seen_pairs)
        for (int i = 0; i < spec.samples_per_pair; ++i) emit(data.train, p);
    for (const Pair& p : data.val_pairs)
        for (int i = 0; i < spec.val_per_pair; ++i) emit(data.val, p);
    for (const Pair& p : data.test_pairs)
        for (int i = 0; i < spec.test_per_pair; ++i) emit(data.test, p);
    return data;
}

namespace {

std::vector<std::pair<std::string, std::string>> read_pair_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot open pair list " + path.string());
    std::vector<std::pair<std::string, std::string>> pairs;
    std::set<std::pair<std::string, std::string>> seen_lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string state, object, extra;
        if (!(ss >> state >> object) || (ss >> extra))
            throw IntegrityError("malformed pair line '" + line + "' in " + path.string());
        if (!seen_lines.insert({state, object}).second)
            throw IntegrityError("duplicate pair '" + state + " " + object + "' in " +
                                 path.string());
        pairs.emplace_back(state, object);
    }
    return pairs;
}

constexpr char kFeatureMagic[8] = {'C', 'Z', 'S', 'L', 'F', 'E', 'A', 'T'};

}  // namespace

Dataset load_split_dir(const std::string& dir) {
    fs::path root(dir);
    auto train_raw = read_pair_file(root / "train_pairs.txt");
    auto val_raw = read_pair_file(root / "val_pairs.txt");
    auto test_raw = read_pair_file(root / "test_pairs.txt");

    // Vocabulary: union of the pair lists, in first-appearance order.
    std::map<std::string, int> state_ids, object_ids;
    Dataset data;
    data.name = root.filename().string();
    auto intern = [&](const std::string& tok, std::map<std::string, int>& table,
                      std::vector<std::string>& names) {
        auto it = table.find(tok);
        if (it != table.end()) return it->second;
        int id = static_cast<int>(names.size());
        table.emplace(tok, id);
        names.push_back(tok);
        return id;
    };
    auto intern_pairs = [&](const std::vector<std::pair<std::string, std::string>>& raw) {
        std::vector<Pair> out;
        out.reserve(raw.size());
        for (const auto& [s, o] : raw)
            out.push_back({intern(s, state_ids, data.space.states),
                           intern(o, object_ids, data.space.objects)});
        std::sort(out.begin(), out.end());
        return out;
    };
    std::vector<Pair> train_pairs = intern_pairs(train_raw);
    data.val_pairs = intern_pairs(val_raw);
    data.test_pairs = intern_pairs(test_raw);

    data.space.seen_pairs = train_pairs;
    std::set<Pair> unseen;
    for (const Pair& p : data.val_pairs)
        if (!std::binary_search(train_pairs.begin(), train_pairs.end(), p)) unseen.insert(p);
    for (const Pair& p : data.test_pairs)
        if (!std::binary_search(train_pairs.begin(), train_pairs.end(), p)) unseen.insert(p);
    data.space.unseen_pairs.assign(unseen.begin(), unseen.end());
    data.space.validate();

    // Sample index.
    std::ifstream in(root / "samples.txt");
    if (!in) throw IntegrityError("cannot open sample index " + (root / "samples.txt").string());
    auto pair_listed = [&](const std::vector<Pair>& pairs, const Pair& p) {
        return std::binary_search(pairs.begin(), pairs.end(), p);
    };
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, state, object, split_tag;
        if (!(ss >> id >> state >> object >> split_tag))
            throw IntegrityError("malformed sample record at line " + std::to_string(lineno));
        auto s_it = state_ids.find(state);
        auto o_it = object_ids.find(object);
        if (s_it == state_ids.end())
            throw VocabularyError("sample " + id + " references unknown state '" + state + "'");
        if (o_it == object_ids.end())
            throw VocabularyError("sample " + id + " references unknown object '" + object + "'");
        Pair p{s_it->second, o_it->second};
        SampleSet* set = nullptr;
        const std::vector<Pair>* listed = nullptr;
        if (split_tag == "train") {
            set = &data.train;
            listed = &train_pairs;
        } else if (split_tag == "val") {
            set = &data.val;
            listed = &data.val_pairs;
        } else if (split_tag == "test") {
            set = &data.test;
            listed = &data.test_pairs;
        } else {
            throw IntegrityError("unknown split tag '" + split_tag + "' at line " +
                                 std::to_string(lineno));
        }
        if (!pair_listed(*listed, p))
            throw IntegrityError("sample " + id + " pair (" + state + "," + object +
                                 ") not listed for split " + split_tag);
        set->state_label.push_back(p.state);
        set->object_label.push_back(p.object);
        set->ids.push_back(id);
    }

    // Optional feature payload, rows aligned with samples.txt order
    // (train records first by convention of save_split_dir).
    fs::path feat = root / "features.bin";
    if (fs::exists(feat)) {
        std::ifstream f(feat, std::ios::binary);
        char magic[8];
        f.read(magic, 8);
        if (!f || std::memcmp(magic, kFeatureMagic, 8) != 0)
            throw IntegrityError("bad feature file header in " + feat.string());
        uint32_t version = 0, dim = 0;
        uint64_t count = 0;
        f.read(reinterpret_cast<char*>(&version), 4);
        f.read(reinterpret_cast<char*>(&count), 8);
        f.read(reinterpret_cast<char*>(&dim), 4);
        long expected = data.train.size() + data.val.size() + data.test.size();
        if (!f || version != 1 || static_cast<long>(count) != expected)
            throw IntegrityError("feature count mismatch in " + feat.string());
        data.input_dim = static_cast<int>(dim);
        auto read_block = [&](SampleSet& set) {
            set.features.resize(static_cast<size_t>(set.size()) * dim);
            f.read(reinterpret_cast<char*>(set.features.data()),
                   static_cast<std::streamsize>(set.features.size() * sizeof(double)));
        };
        read_block(data.train);
        read_block(data.val);
        read_block(data.test);
        if (!f) throw IntegrityError("truncated feature file " + feat.string());
    }
    return data;
}

void save_split_dir(const Dataset& data, const std::string& dir) {
    fs::create_directories(dir);
    fs::path root(dir);
    auto write_pairs = [&](const std::vector<Pair>& pairs, const char* file) {
        std::ofstream out(root / file);
        for (const Pair& p : pairs)
            out << data.space.states[static_cast<size_t>(p.state)] << ' '
                << data.space.objects[static_cast<size_t>(p.object)] << '\n';
    };
    write_pairs(data.space.seen_pairs, "train_pairs.txt");
    write_pairs(data.val_pairs, "val_pairs.txt");
    write_pairs(data.test_pairs, "test_pairs.txt");

    std::ofstream samples(root / "samples.txt");
    auto write_samples = [&](const SampleSet& set, const char* tag) {
        for (int i = 0; i < set.size(); ++i)
            samples << set.ids[static_cast<size_t>(i)] << ' '
                    << data.space.states[static_cast<size_t>(set.state_label[static_cast<size_t>(i)])] << ' '
                    << data.space.objects[static_cast<size_t>(set.object_label[static_cast<size_t>(i)])] << ' '
                    << tag << '\n';
    };
    write_samples(data.train, "train");
    write_samples(data.val, "val");
    write_samples(data.test, "test");

    if (data.has_features()) {
        std::ofstream f(root / "features.bin", std::ios::binary);
        f.write(kFeatureMagic, 8);
        uint32_t version = 1, dim = static_cast<uint32_t>(data.input_dim);
        uint64_t count = static_cast<uint64_t>(data.train.size() + data.val.size() +
                                               data.test.size());
        f.write(reinterpret_cast<const char*>(&version), 4);
        f.write(reinterpret_cast<const char*>(&count), 8);
        f.write(reinterpret_cast<const char*>(&dim), 4);
        for (const SampleSet* set : {&data.train, &data.val, &data.test})
            f.write(reinterpret_cast<const char*>(set->features.data()),
                    static_cast<std::streamsize>(set->features.size() * sizeof(double)));
    }
}

}  // namespace czsl
