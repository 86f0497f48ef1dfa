from macrorealapp.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Write Q- and P-function data for a cat state and its mixture."
    experiment = "qpf_render"
