#pragma once

#include <string>
#include <vector>

#include "coherent/common.hpp"

namespace coherent {

// Ordered concept vocabulary: short identifiers plus the free-text word
// phrases used for the text-embedding anchors.
struct ConceptVocabulary {
    std::vector<std::string> names;
    std::vector<std::string> phrases;

    int size() const { return static_cast<int>(names.size()); }

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return static_cast<int>(i);
        return -1;
    }

    void validate() const {
        if (names.empty() || names.size() != phrases.size())
            throw ConfigError("vocabulary must have k >= 1 names with matching phrases");
        for (std::size_t i = 0; i < names.size(); ++i)
            for (std::size_t j = i + 1; j < names.size(); ++j)
                if (names[i] == names[j]) throw ConfigError("duplicate concept name: " + names[i]);
    }

    // The eight dermoscopic criteria, in their canonical order.
    static ConceptVocabulary dermoscopic() {
        ConceptVocabulary v;
        v.names = {"APN", "TPN", "BWV", "ISTR", "RSTR", "RDG", "IDG", "RS"};
        v.phrases = {"Atypical Pigment Network", "Typical Pigment Network", "Blue Whitish-Veil",
                     "Irregular Streaks",        "Regular Streaks",         "Regular Dots and Globules",
                     "Irregular Dots and Globules", "Regression Structures"};
        return v;
    }
};

}  // namespace coherent
