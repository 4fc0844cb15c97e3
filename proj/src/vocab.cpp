#include "vlprompt/vocab.hpp"

#include <cmath>

#include "vlprompt/errors.hpp"

namespace vlp {

ObservationVocabulary::ObservationVocabulary() {
    auto obs = [](std::string name, std::vector<std::string> syn) {
        Observation o;
        o.name = std::move(name);
        o.synonyms = std::move(syn);
        return o;
    };
    entries_ = {
        obs("No Finding", {}),
        obs("Enlarged Cardiomediastinum", {"enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening"}),
        obs("Cardiomegaly", {"cardiomegaly", "enlarged heart", "cardiac enlargement"}),
        obs("Lung Opacity", {"lung opacity", "hazy opacity", "patchy opacity"}),
        obs("Lung Lesion", {"lung lesion", "pulmonary nodule", "focal mass"}),
        obs("Edema", {"edema", "pulmonary edema", "vascular congestion"}),
        obs("Consolidation", {"consolidation", "airspace consolidation", "lobar consolidation"}),
        obs("Pneumonia", {"pneumonia", "infectious process", "pneumonic infiltrate"}),
        obs("Atelectasis", {"atelectasis", "basilar collapse", "subsegmental collapse"}),
        obs("Pneumothorax", {"pneumothorax", "pleural air", "apical air collection"}),
        obs("Pleural Effusion", {"pleural effusion", "pleural fluid", "costophrenic blunting"}),
        obs("Pleural Other", {"pleural thickening", "pleural plaque", "pleural scarring"}),
        obs("Fracture", {"fracture", "rib fracture", "bony fracture"}),
        obs("Support Devices", {"support devices", "endotracheal tube", "central line"}),
    };
    // Findings 1..13 occupy distinct cells of the 4x4 placement grid and each
    // draws its own glyph, so classes stay separable under pooling that
    // discards position.
    for (int k = 1; k < static_cast<int>(entries_.size()); ++k) {
        auto& m = entries_[static_cast<std::size_t>(k)].motif;
        m.cell = k - 1;
        m.shape_id = k - 1;
        m.amplitude = 0.5;
    }
    unseen_ = {index_of("Atelectasis"), index_of("Cardiomegaly"), index_of("Consolidation"), index_of("Edema"),
               index_of("Pleural Effusion")};
    for (int k = 0; k < size(); ++k) {
        bool held = false;
        for (const int u : unseen_) held = held || (u == k);
        if (!held) base_.push_back(k);
    }
}

const ObservationVocabulary& ObservationVocabulary::standard() {
    static const ObservationVocabulary vocab;
    return vocab;
}

int ObservationVocabulary::index_of(const std::string& name) const {
    for (int k = 0; k < size(); ++k) {
        if (entries_[static_cast<std::size_t>(k)].name == name) return k;
    }
    return -1;
}

std::vector<std::int64_t> ObservationVocabulary::motif_pixels(int k, int h, int w) const {
    if (k <= 0 || k >= size()) throw Error("motif_pixels: observation " + std::to_string(k) + " has no motif");
    const MotifSpec& m = at(k).motif;
    const int ch = h / 4, cw = w / 4;
    const int r0 = (m.cell / 4) * ch, c0 = (m.cell % 4) * cw;
    const double cy = r0 + (ch - 1) / 2.0, cx = c0 + (cw - 1) / 2.0;
    const double rad = 0.38 * static_cast<double>(std::min(ch, cw));

    std::vector<std::int64_t> px;
    for (int y = r0; y < r0 + ch; ++y) {
        for (int x = c0; x < c0 + cw; ++x) {
            const double dy = y - cy, dx = x - cx;
            const double dist = std::sqrt(dy * dy + dx * dx);
            bool in = false;
            switch (m.shape_id) {
                case 0: in = dist <= rad; break;                                                    // disk
                case 1: in = std::abs(dy) <= rad * 0.8 && std::abs(dx) <= rad * 0.8; break;         // square
                case 2: in = dist <= rad && dist >= rad * 0.55; break;                              // ring
                case 3: in = std::abs(dy) <= rad * 0.3 || std::abs(dx) <= rad * 0.3; break;         // cross
                case 4: in = std::abs(dy) <= rad * 0.35; break;                                     // hbar
                case 5: in = std::abs(dx) <= rad * 0.35; break;                                     // vbar
                case 6: in = std::abs(dy - dx) <= rad * 0.45; break;                                // diagonal
                case 7: in = ((y - r0) / 2 + (x - c0) / 2) % 2 == 0; break;                         // checker
                case 8:                                                                             // frame
                    in = std::max(std::abs(dy), std::abs(dx)) <= rad * 0.9 &&
                         std::max(std::abs(dy), std::abs(dx)) >= rad * 0.5;
                    break;
                case 9: in = std::abs(dy + dx) <= rad * 0.45; break;                                // anti-diagonal
                case 10: in = dy <= 0 && dist <= rad; break;                                        // half disk
                case 11: in = std::abs(dx) + std::abs(dy) <= rad; break;                            // diamond
                default: in = dy >= -rad * 0.2 && std::abs(dx) <= (dy + rad) * 0.5; break;          // triangle
            }
            if (in) px.push_back(static_cast<std::int64_t>(y) * w + x);
        }
    }
    return px;
}

std::array<int, 4> ObservationVocabulary::motif_bbox(int k, int h, int w) const {
    const MotifSpec& m = at(k).motif;
    const int ch = h / 4, cw = w / 4;
    const int r0 = (m.cell / 4) * ch, c0 = (m.cell % 4) * cw;
    return {r0, c0, r0 + ch, c0 + cw};
}

LabelVector LabelVector::from_findings(const std::vector<int>& finding_ids) {
    LabelVector lv;
    for (const int k : finding_ids) {
        if (k <= 0 || k >= kNumObservations) {
            throw Error("LabelVector: finding index " + std::to_string(k) + " out of range");
        }
        lv.values[static_cast<std::size_t>(k)] = 1;
    }
    lv.apply_no_finding_rule();
    return lv;
}

void LabelVector::apply_no_finding_rule() {
    bool any = false;
    for (int k = 1; k < kNumObservations; ++k) any = any || values[static_cast<std::size_t>(k)] != 0;
    values[kNoFindingIndex] = any ? 0 : 1;
}

bool LabelVector::valid() const {
    bool any = false;
    for (int k = 1; k < kNumObservations; ++k) any = any || values[static_cast<std::size_t>(k)] != 0;
    return values[kNoFindingIndex] == (any ? 0 : 1);
}

int LabelVector::lowest_positive() const {
    for (int k = 0; k < kNumObservations; ++k) {
        if (values[static_cast<std::size_t>(k)]) return k;
    }
    return -1;
}

double LabelVector::cosine(const LabelVector& other) const {
    double dot = 0, na = 0, nb = 0;
    for (int k = 0; k < kNumObservations; ++k) {
        const auto uk = static_cast<std::size_t>(k);
        dot += static_cast<double>(values[uk]) * other.values[uk];
        na += static_cast<double>(values[uk]) * values[uk];
        nb += static_cast<double>(other.values[uk]) * other.values[uk];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;  // all-zero fallback
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace vlp
