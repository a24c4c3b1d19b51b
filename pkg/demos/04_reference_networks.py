"""
The two reference convolutional networks
========================================

Both use valid 3x3 convolutions and floor 2x2 pooling, three conv layers of
32, 64 and 64 channels and one hidden dense layer of width 64.  Only the
input shape differs.
"""

from deltaboot import netcore, trainer

for name, spec in (("MNIST", netcore.mnist_reference_spec()), ("CIFAR-10", netcore.cifar_reference_spec())):
    print(f"{name}: {spec.num_params} parameters")
    for i, layer in enumerate(spec.layers):
        print(f"  {type(layer).__name__:<10} {spec.shapes[i]}")

# full-scale step schedules (steps, rate); configs/mnist_full.json uses the first
print("MNIST schedule:", trainer.MNIST_SCHEDULE, "for", trainer.MNIST_STEPS, "steps")
print("CIFAR schedule:", trainer.CIFAR_SCHEDULE, "for", trainer.CIFAR_STEPS, "steps")
