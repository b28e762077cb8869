#pragma once

// Consolidation of anti-virus detection names into "class.family" labels,
// plus Cohen's kappa for annotator agreement.

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace visunpack::labelrefiner {

struct LabelRecord {
  std::string sample_id;
  /// vendor name -> raw detection label
  std::map<std::string, std::string> vendor_labels;
};

struct SynonymGroup {
  std::string canonical;
  std::set<std::string> members;
};

struct RefinerParams {
  double thr = 0.75;
  std::size_t t = 3;
  std::size_t min_token_len = 3;
  std::set<std::string> stopwords;
  std::vector<SynonymGroup> synonym_groups;
  std::set<std::string> broad_classes;

  /// Defaults: platform/engine tags as stopwords, pua/pup/pua synonyms,
  /// trojan/adware/worm/virus/pua/backdoor/ransom/pws/... as broad classes.
  static RefinerParams defaults();
  /// Throws Error{InvalidArgument}.
  void validate() const;
};

struct RefinedLabel {
  std::string sample_id;
  std::string class_token;
  std::string family_token;
  /// Vendors whose label contributed the class or family token.
  std::size_t confidence = 0;
  /// Family equals class: nothing more specific survived.
  bool low_specificity = false;
  /// More than one broad class among the top tokens.
  bool multi_class = false;

  std::string label() const { return class_token + "." + family_token; }
};

struct RefineResult {
  std::vector<RefinedLabel> labels;
  /// Samples whose vendor labels all filtered away (NoUsableTokens).
  std::vector<std::string> manual_review;
};

/// Splits on non-alphanumerics, lowercases, and drops non-alphabetic,
/// short, and stopword tokens.
std::vector<std::string> tokenize(std::string_view raw_label, const RefinerParams& params);

/// |LCS(a, b)| / min(|a|, |b|). Throws Error{EmptyString}.
double lcs_similarity(std::string_view a, std::string_view b);

/// Token -> canonical token. Tokens are visited shortest first (then more
/// frequent, then lexicographic); each maps to the shortest earlier canonical
/// token with similarity >= thr, else itself. Synonym groups apply last.
std::map<std::string, std::string> merge_tokens(const std::map<std::string, std::size_t>& frequencies,
                                                const RefinerParams& params);

/// Dataset-wide refinement. Throws Error{InvalidArgument} for no records.
RefineResult refine(const std::vector<LabelRecord>& records, const RefinerParams& params);

/// Single-sample refinement inside the pool of `records`. Throws
/// Error{NoUsableTokens} when every vendor label filters away.
RefinedLabel refine_one(const LabelRecord& record, const std::vector<LabelRecord>& records,
                        const RefinerParams& params);

/// Cohen's kappa over two label vectors. Throws Error{LengthMismatch}.
double cohens_kappa(const std::vector<std::string>& labels_a,
                    const std::vector<std::string>& labels_b);

/// Parses one vendor report: the native layout
///   {"sample_id": "...", "labels": {"Vendor": "Label", ...}}
/// or a third-party scan report ("data.attributes.last_analysis_results" or
/// "scans"), keeping only vendors that returned a label.
LabelRecord parse_vendor_report(std::string_view json_text);

/// `sample_id<TAB>class.family<TAB>confidence` lines.
std::string format_refined(const std::vector<RefinedLabel>& labels);

}  // namespace visunpack::labelrefiner
