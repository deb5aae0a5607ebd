"""Two-stage adversarial VAE synthesis of 3D lesion masks and images.

Stage one learns the mask distribution conditioned on lesion size; stage
two paints lesion appearance guided by a mask.  Both train as VAE-GANs
with a Wasserstein critic and gradient penalty, on a small self-contained
autodiff core (double backward included, which the penalty needs).
"""

from .tensor import Tensor, Function, no_grad, grad, GraphConsumedError
from .nn import Parameter, Linear, Conv3dLayer, Adam, instance_norm3d
from .conditioning import (ConditionVector, MaskVolume, encode_condition,
                           ConditionEmbedding, MaskEmbedding)
from .models import (NetConfig, Encoder, MaskDecoder, LesionDecoder, Critic,
                     SynthesisStage, build_mask_stage, build_lesion_stage,
                     reparameterize)
from .losses import (LossWeights, GpConfig, LossReport, recon_mse,
                     kl_gaussian, gradient_penalty, critic_loss,
                     gen_adv_loss, generator_total)
from .training import (TrainConfig, TrainedStage, TrainingDiverged,
                       train_mask_stage, train_lesion_stage, write_loss_csv)
from .sampling import (sample_masks, sample_lesions, composite,
                       binarize_mask, DegenerateModel)
from .phantoms import PhantomSpec, SamplePair, make_phantoms
from .metrics import (MetricsReport, psnr, ssim3d, nmse, dice, jaccard,
                      asd, hd95, surface_distances, synthesis_report,
                      segmentation_report)
from .experiments import (Segmenter, SegTrainConfig, DownstreamReport,
                          train_segmenter, evaluate_segmenter,
                          run_downstream_experiment)
from .volio import (Config, RunManifest, FormatError, read_volume,
                    write_volume, read_checkpoint, write_checkpoint)

__version__ = "0.1.0"
