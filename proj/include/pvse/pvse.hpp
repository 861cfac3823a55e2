#ifndef PVSE_PVSE_HPP_
#define PVSE_PVSE_HPP_

#include "pvse/dataset.hpp"
#include "pvse/embedding.hpp"
#include "pvse/error.hpp"
#include "pvse/eval.hpp"
#include "pvse/loss.hpp"
#include "pvse/model_io.hpp"
#include "pvse/part_scheme.hpp"
#include "pvse/partmap.hpp"
#include "pvse/pipeline.hpp"
#include "pvse/query.hpp"
#include "pvse/service.hpp"
#include "pvse/train.hpp"

#endif  // PVSE_PVSE_HPP_
