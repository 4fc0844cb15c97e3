#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vlp {

inline constexpr int kNumObservations = 14;
inline constexpr int kNoFindingIndex = 0;

/// Where and how an observation paints its visual evidence: a small glyph in
/// a dedicated cell of a 4x4 canvas grid, additive over the noisy background.
struct MotifSpec {
    int shape_id = 0;  // 0 disk, 1 square, 2 ring, 3 cross, 4 hbar
    int cell = 0;      // index into the 4x4 placement grid
    double amplitude = 0.5;
};

struct Observation {
    std::string name;
    std::vector<std::string> synonyms;  // lowercase token phrases used in reports
    MotifSpec motif;
};

/// The fixed 14-observation vocabulary, index 0 = "No Finding".
class ObservationVocabulary {
public:
    static const ObservationVocabulary& standard();

    const std::vector<Observation>& entries() const { return entries_; }
    const Observation& at(int k) const { return entries_[static_cast<std::size_t>(k)]; }
    int size() const { return static_cast<int>(entries_.size()); }
    /// Index of an observation by exact name, -1 if unknown.
    int index_of(const std::string& name) const;

    /// The 5 held-out classes used only for zero-/few-shot evaluation.
    const std::vector<int>& unseen_class_ids() const { return unseen_; }
    /// The 9 remaining classes that train the prompt generator.
    const std::vector<int>& base_class_ids() const { return base_; }

    /// Flat pixel indices of observation k's motif on an HxW canvas, plus its
    /// bounding box (r0, c0, r1, c1), half-open.
    std::vector<std::int64_t> motif_pixels(int k, int h, int w) const;
    std::array<int, 4> motif_bbox(int k, int h, int w) const;

private:
    ObservationVocabulary();
    std::vector<Observation> entries_;
    std::vector<int> unseen_;
    std::vector<int> base_;
};

/// Multi-hot vector over the observation vocabulary.
/// Rule: positive findings force "No Finding" to 0; no findings force it to 1.
struct LabelVector {
    std::array<std::uint8_t, kNumObservations> values{};

    static LabelVector from_findings(const std::vector<int>& finding_ids);
    void apply_no_finding_rule();
    bool valid() const;
    int lowest_positive() const;  // class id tie-break: lowest positive index
    double cosine(const LabelVector& other) const;

    bool operator==(const LabelVector&) const = default;
};

}  // namespace vlp
