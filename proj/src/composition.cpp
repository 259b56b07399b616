#include "czsl/composition.hpp"

#include <algorithm>

namespace czsl {

bool CompositionSpace::is_seen(const Pair& p) const {
    return std::binary_search(seen_pairs.begin(), seen_pairs.end(), p);
}

bool CompositionSpace::is_unseen(const Pair& p) const {
    return std::binary_search(unseen_pairs.begin(), unseen_pairs.end(), p);
}

void CompositionSpace::validate() const {
    auto check_sorted_unique = [](const std::vector<Pair>& v, const char* which) {
        if (!std::is_sorted(v.begin(), v.end()))
            throw IntegrityError(std::string(which) + " pair list is not sorted");
        if (std::adjacent_find(v.begin(), v.end()) != v.end())
            throw IntegrityError(std::string(which) + " pair list contains duplicates");
    };
    check_sorted_unique(seen_pairs, "seen");
    check_sorted_unique(unseen_pairs, "unseen");
    for (const Pair& p : unseen_pairs)
        if (is_seen(p))
            throw IntegrityError("pair (" + std::to_string(p.state) + "," +
                                 std::to_string(p.object) + ") listed as both seen and unseen");
    auto in_vocab = [this](const Pair& p) {
        return p.state >= 0 && p.state < num_states() && p.object >= 0 &&
               p.object < num_objects();
    };
    for (const Pair& p : seen_pairs)
        if (!in_vocab(p))
            throw VocabularyError("seen pair (" + std::to_string(p.state) + "," +
                                  std::to_string(p.object) + ") outside vocabulary");
    for (const Pair& p : unseen_pairs)
        if (!in_vocab(p))
            throw VocabularyError("unseen pair (" + std::to_string(p.state) + "," +
                                  std::to_string(p.object) + ") outside vocabulary");
}

std::vector<Pair> CompositionSpace::candidate_pairs(World world) const {
    if (world == World::Open) return all_pairs();
    std::vector<Pair> out;
    out.reserve(seen_pairs.size() + unseen_pairs.size());
    std::merge(seen_pairs.begin(), seen_pairs.end(), unseen_pairs.begin(), unseen_pairs.end(),
               std::back_inserter(out));
    return out;
}

std::vector<Pair> CompositionSpace::all_pairs() const {
    std::vector<Pair> out;
    out.reserve(static_cast<size_t>(num_states()) * static_cast<size_t>(num_objects()));
    for (int s = 0; s < num_states(); ++s)
        for (int o = 0; o < num_objects(); ++o) out.push_back({s, o});
    return out;
}

CandidateIndex CandidateIndex::build(const std::vector<Pair>& pairs,
                                     const CompositionSpace& space) {
    CandidateIndex idx;
    idx.pairs = pairs;
    idx.state_of.reserve(pairs.size());
    idx.object_of.reserve(pairs.size());
    idx.seen_column.reserve(pairs.size());
    for (const Pair& p : pairs) {
        if (p.state < 0 || p.state >= space.num_states() || p.object < 0 ||
            p.object >= space.num_objects())
            throw IntegrityError("candidate pair (" + std::to_string(p.state) + "," +
                                 std::to_string(p.object) + ") inconsistent with space");
        idx.state_of.push_back(p.state);
        idx.object_of.push_back(p.object);
        idx.seen_column.push_back(space.is_seen(p));
    }
    return idx;
}

int CandidateIndex::column_of(const Pair& p) const {
    for (size_t i = 0; i < pairs.size(); ++i)
        if (pairs[i] == p) return static_cast<int>(i);
    return -1;
}

}  // namespace czsl
