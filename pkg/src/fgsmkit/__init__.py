"""Desk-scale FGSM toolkit: a numpy CNN with hand-written backprop, Adam
training, FGSM attacks, adversarial training and classification reports."""

__version__ = "0.1.0"
