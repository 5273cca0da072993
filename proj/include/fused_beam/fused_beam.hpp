#pragma once

#include "fused_beam/acoustic.hpp"
#include "fused_beam/arpa.hpp"
#include "fused_beam/beam_decoder.hpp"
#include "fused_beam/char_lm.hpp"
#include "fused_beam/coverage.hpp"
#include "fused_beam/errors.hpp"
#include "fused_beam/fusion.hpp"
#include "fused_beam/kaldi_io.hpp"
#include "fused_beam/lexicon_trie.hpp"
#include "fused_beam/lookahead_fusion.hpp"
#include "fused_beam/multilevel_fusion.hpp"
#include "fused_beam/score_matrix.hpp"
#include "fused_beam/scoring.hpp"
#include "fused_beam/token_dict.hpp"
#include "fused_beam/word_lm.hpp"
