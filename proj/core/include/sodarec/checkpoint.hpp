#pragma once

#include "sodarec/nn.hpp"
#include "sodarec/seqmodel.hpp"

#include <string>
#include <vector>

namespace sodarec {

// Codebook export: magic "SODA-CB", then version, L, K, d_code as u32
// little-endian, then L*K*d_code f32 little-endian values in layer-major,
// codeword-major order.
void save_codebooks(const std::string& path, const std::vector<MatF>& layers);
std::vector<MatF> load_codebooks(const std::string& path, uint32_t* version = nullptr);

// Model checkpoint: magic "SODA-CP", u32 version, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rank, u32 dims, f32 values.
void save_checkpoint(const std::string& path, const NamedParams<float>& params);

// Loads into already-shaped parameters; names, order, and shapes must match.
void load_checkpoint(const std::string& path, const NamedParams<float>& params);

// Byte-level file comparison, for reproducibility checks.
bool files_identical(const std::string& a, const std::string& b);

// Semantic-ID table as tab-separated text: item_id, c_1..c_L (1-based on
// disk), disambiguation token.
void save_semantic_ids(const SemanticIdMap& ids, const std::string& path);
SemanticIdMap load_semantic_ids(const std::string& path);

}  // namespace sodarec
