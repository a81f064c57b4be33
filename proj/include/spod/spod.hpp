#pragma once

#include "spod/errors.hpp"
#include "spod/linalg.hpp"
#include "spod/io.hpp"
#include "spod/nn.hpp"
#include "spod/data.hpp"
#include "spod/train.hpp"
#include "spod/class_means.hpp"
#include "spod/parallel.hpp"
#include "spod/ntk.hpp"
#include "spod/gradpca.hpp"
#include "spod/certificates.hpp"
#include "spod/baselines.hpp"
#include "spod/eval.hpp"
#include "spod/config.hpp"
