// Optional one-shot demographics form. Enumerated values only; skipping
// submits nothing, and the buttons lock after the first click so a slow
// network cannot double-post.

import { Demographics } from './api.js';

const FIELDS: { key: keyof Demographics; label: string; options: [string, string][] }[] = [
  {
    key: 'location',
    label: 'Are you based in London?',
    options: [
      ['london', 'Yes, in London'],
      ['not_london', 'No'],
    ],
  },
  {
    key: 'gender',
    label: 'Gender',
    options: [
      ['female', 'Female'],
      ['male', 'Male'],
      ['other', 'Other / prefer not to say'],
    ],
  },
  {
    key: 'activity',
    label: 'Do you take a walk at least twice a week?',
    options: [
      ['high', 'Yes'],
      ['low', 'No'],
    ],
  },
  {
    key: 'source',
    label: 'How did you find this survey?',
    options: [
      ['amt', 'Mechanical Turk'],
      ['network', 'Friends / colleagues / social media'],
    ],
  },
];

export function renderDemographicsForm(
  onSubmit: (demographics: Demographics) => void,
  onSkip: () => void,
): HTMLElement {
  const form = document.createElement('form');
  form.className = 'demographics';

  const selects = new Map<keyof Demographics, HTMLSelectElement>();
  for (const field of FIELDS) {
    const label = document.createElement('label');
    label.textContent = field.label;
    const select = document.createElement('select');
    select.name = field.key;
    const blank = document.createElement('option');
    blank.value = '';
    blank.textContent = '(no answer)';
    select.appendChild(blank);
    for (const [value, text] of field.options) {
      const option = document.createElement('option');
      option.value = value;
      option.textContent = text;
      select.appendChild(option);
    }
    selects.set(field.key, select);
    label.appendChild(select);
    form.appendChild(label);
  }

  const error = document.createElement('div');
  error.className = 'form-error';
  form.appendChild(error);

  const submit = document.createElement('button');
  submit.type = 'submit';
  submit.className = 'submit';
  submit.textContent = 'Save answers';
  const skip = document.createElement('button');
  skip.type = 'button';
  skip.className = 'skip';
  skip.textContent = 'Skip';
  form.append(submit, skip);

  const lock = () => {
    submit.disabled = true;
    skip.disabled = true;
  };

  form.addEventListener('submit', (event) => {
    event.preventDefault();
    if (submit.disabled) {
      return;
    }
    const demographics: Demographics = {};
    for (const [key, select] of selects) {
      if (select.value) {
        (demographics as Record<string, string>)[key] = select.value;
      }
    }
    lock();
    if (Object.keys(demographics).length === 0) {
      onSkip(); // nothing selected: identical to skipping
      return;
    }
    onSubmit(demographics);
  });
  skip.addEventListener('click', () => {
    if (skip.disabled) {
      return;
    }
    lock();
    onSkip();
  });

  return form;
}
