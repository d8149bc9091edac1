"""Shape correspondence via diffusion-sampled functional maps.

Pipeline: cotangent-Laplacian spectral preprocessing, learned sign
correction of the eigenbasis, a denoising diffusion model that samples
template-wise functional maps from spectral conditioning, spectral
upsampling of composed maps, and Dirichlet-energy candidate selection.
"""

from .config import PipelineConfig, load_config
from .descriptors import DescriptorField, wks
from .diffusion import (DenoiserParams, DiffusionSchedule, build_conditioning,
                        forward_noise, init_denoiser, make_schedule, sample,
                        train_ddpm)
from .errors import (ConfigurationError, DegeneracyError, MeshFormatError,
                     SamplingError, ShapeDiffError, SingularityError,
                     SolverError, TopologyError, TrainingError)
from .fmaps import (FunctionalMap, PointMap, compose_via_template,
                    fmap_from_descriptors, fmap_from_pointmap, load_pointmap,
                    pairwise_lstsq, pointmap_from_fmap, save_pointmap,
                    zoomout)
from .mesh import Mesh, SparseSymMatrix, cotan_laplacian, load_mesh, save_off, \
    vertex_area_matrix
from .selection import (CandidateSet, dirichlet_energy, rank_candidates,
                        select_best, select_medoid)
from .sign_correction import (FeatureExtractorParams, SignVector,
                              correct_signs, extract_features,
                              group_assignment, init_feature_extractor,
                              train_sign_corrector)
from .spectral import SpectralBasis, eigenbasis, load_basis, project, \
    save_basis, spectral_smooth, synthesize
from .synth import (GroundTruthPair, ShapeFamilyConfig, decimate_tracked,
                    deform, gen_fmap_dataset, make_shape, make_template)

__version__ = "0.1.0"
