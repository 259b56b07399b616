#pragma once

#include <string>
#include <utility>
#include <vector>

#include "czsl/errors.hpp"

namespace czsl {

// A (state, object) pair by vocabulary index.
struct Pair {
    int state = 0;
    int object = 0;
    friend bool operator==(const Pair&, const Pair&) = default;
    friend auto operator<=>(const Pair&, const Pair&) = default;
};

enum class World { Closed, Open };

// State/object vocabularies plus the seen/unseen pair split. Candidate sets
// for evaluation derive from the world setting: closed = seen + unseen,
// open = the full Cartesian product.
struct CompositionSpace {
    std::vector<std::string> states;
    std::vector<std::string> objects;
    std::vector<Pair> seen_pairs;    // sorted, unique
    std::vector<Pair> unseen_pairs;  // sorted, unique, disjoint from seen

    int num_states() const { return static_cast<int>(states.size()); }
    int num_objects() const { return static_cast<int>(objects.size()); }

    bool is_seen(const Pair& p) const;
    bool is_unseen(const Pair& p) const;

    // Throws IntegrityError on seen/unseen overlap or out-of-vocabulary pairs.
    void validate() const;

    std::vector<Pair> candidate_pairs(World world) const;
    std::vector<Pair> all_pairs() const;
};

// Candidate list with index maps used for scoring: column -> (state, object)
// and the seen/unseen column mask.
struct CandidateIndex {
    std::vector<Pair> pairs;
    std::vector<int> state_of;      // per column
    std::vector<int> object_of;     // per column
    std::vector<bool> seen_column;  // per column

    int size() const { return static_cast<int>(pairs.size()); }
    static CandidateIndex build(const std::vector<Pair>& pairs, const CompositionSpace& space);
    // Column of a pair, or -1 when absent.
    int column_of(const Pair& p) const;
};

}  // namespace czsl
